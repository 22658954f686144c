"""Plain-loop reference implementations used as independent oracles.

These deliberately avoid the vectorized code paths: everything is scalar
numpy inside explicit Python loops. The self-check command and the test
suite compare the production kernels against these.
"""

from __future__ import annotations

import itertools

import numpy as np


def bilinear_ref(fmap: np.ndarray, x: float, y: float) -> np.ndarray:
    """Single bilinear sample with zero padding, (H, W, C) map."""
    h, w, c = fmap.shape
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    out = np.zeros(c)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            cx, cy = x0 + dx, y0 + dy
            if 0 <= cx < w and 0 <= cy < h:
                out += wx * wy * fmap[cy, cx]
    return out


def ms_deform_attn_ref(queries: np.ndarray, ref_points: np.ndarray,
                       level_maps: list[np.ndarray], weights: dict) -> np.ndarray:
    """Quintuple-loop deformable attention.

    ``weights`` carries the projection matrices of the production module:
    value_w/value_b (d_feat -> M*hd), offset_w/offset_b, weight_w/weight_b,
    out_w/out_b.
    """
    n, _ = queries.shape
    m = weights["heads"]
    lv = len(level_maps)
    k = weights["points"]
    hd = weights["value_b"].size // m

    values = []
    for fmap in level_maps:
        h, w, _ = fmap.shape
        flat = fmap.reshape(h * w, -1) @ weights["value_w"] + weights["value_b"]
        values.append(flat.reshape(h, w, m, hd))

    offsets = (queries @ weights["offset_w"] + weights["offset_b"]).reshape(
        n, m, lv, k, 2)
    logits = (queries @ weights["weight_w"] + weights["weight_b"]).reshape(
        n, m, lv * k)
    exp = np.exp(logits - logits.max(axis=-1, keepdims=True))
    attn = (exp / exp.sum(axis=-1, keepdims=True)).reshape(n, m, lv, k)

    out = np.zeros((n, m * hd))
    for q in range(n):
        for head in range(m):
            acc = np.zeros(hd)
            for l, fmap in enumerate(level_maps):
                h, w, _ = fmap.shape
                base_x = ref_points[q, 0] * w - 0.5
                base_y = ref_points[q, 1] * h - 0.5
                for p in range(k):
                    dx, dy = offsets[q, head, l, p]
                    sample = bilinear_ref(values[l][:, :, head, :],
                                          base_x + dx, base_y + dy)
                    acc += attn[q, head, l, p] * sample
            out[q, head * hd:(head + 1) * hd] = acc
    return out @ weights["out_w"] + weights["out_b"]


def roi_align_ref(fmap: np.ndarray, boxes: np.ndarray, grid: int) -> np.ndarray:
    """Per-bin loop ROIAlign oracle over normalized cxcywh boxes."""
    h, w, c = fmap.shape
    n = boxes.shape[0]
    out = np.zeros((n, grid, grid, c))
    for q in range(n):
        cx, cy, bw, bh = boxes[q]
        for i in range(grid):
            for j in range(grid):
                px = (cx - bw / 2 + bw * (j + 0.5) / grid) * w - 0.5
                py = (cy - bh / 2 + bh * (i + 0.5) / grid) * h - 0.5
                out[q, i, j] = bilinear_ref(fmap, px, py)
    return out


def hungarian_brute_force(cost: np.ndarray) -> float:
    """Minimum assignment cost by exhaustive permutation search (n, m <= ~7)."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    best = np.inf
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            best = min(best, sum(cost[i, perm[i]] for i in range(n)))
    else:
        for perm in itertools.permutations(range(n), m):
            best = min(best, sum(cost[perm[j], j] for j in range(m)))
    return float(best)


def extract_attention_weights(attn) -> dict:
    """Snapshot an MSDeformAttention module's projections for the oracle."""
    return {
        "heads": attn.heads,
        "points": attn.points,
        "value_w": attn.value_proj.weight.data.copy(),
        "value_b": attn.value_proj.bias.data.copy(),
        "offset_w": attn.offset_proj.weight.data.copy(),
        "offset_b": attn.offset_proj.bias.data.copy(),
        "weight_w": attn.weight_proj.weight.data.copy(),
        "weight_b": attn.weight_proj.bias.data.copy(),
        "out_w": attn.output_proj.weight.data.copy(),
        "out_b": attn.output_proj.bias.data.copy(),
    }
