"""Multi-scale deformable attention over a feature pyramid.

Sampling convention (tests depend on it bit-exactly): pixel centers sit at
integer coordinates, and a normalized point p in [0,1]^2 maps to level-l
pixel coordinates as (p_x * W_l - 0.5, p_y * H_l - 0.5). Out-of-bounds
bilinear neighbors contribute zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Linear, Module
from .tensor import ShapeError, Tensor, concat, softmax

# Counts every bilinear sample taken; tests use it to verify the sparse
# sampling budget. A nonzero fault scale corrupts the kernel on purpose
# (self-check fault injection hook): samples are multiplied by 1 + scale.
SAMPLE_COUNTER = 0
_FAULT_SCALE = 0.0


def reset_sample_counter() -> None:
    global SAMPLE_COUNTER
    SAMPLE_COUNTER = 0


def set_bilinear_fault(scale: float) -> None:
    global _FAULT_SCALE
    _FAULT_SCALE = float(scale)


@dataclass
class FeaturePyramid:
    """L per-level feature maps, each (H_l, W_l, d), finest first."""

    levels: list[Tensor]

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.levels[0].shape[-1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(lvl.shape[0], lvl.shape[1]) for lvl in self.levels]

    @property
    def level_offsets(self) -> list[int]:
        """Start offsets of each level in the flattened concatenation."""
        offsets = [0]
        for h, w in self.shapes:
            offsets.append(offsets[-1] + h * w)
        return offsets

    def flatten(self) -> Tensor:
        """Concatenate all levels into (sum H_l*W_l, d)."""
        return concat([lvl.reshape(-1, self.dim) for lvl in self.levels], axis=0)

    @staticmethod
    def unflatten(tokens: Tensor, shapes: list[tuple[int, int]]) -> "FeaturePyramid":
        dim = tokens.shape[-1]
        levels = []
        start = 0
        for h, w in shapes:
            levels.append(tokens[start:start + h * w, :].reshape(h, w, dim))
            start += h * w
        return FeaturePyramid(levels)

    def reference_grid(self) -> np.ndarray:
        """Normalized center location of every flattened token, (S, 2)."""
        pts = []
        for h, w in self.shapes:
            ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
            pts.append(np.stack([(xs.ravel() + 0.5) / w,
                                 (ys.ravel() + 0.5) / h], axis=1))
        return np.concatenate(pts, axis=0)


def bilinear_sample(fmap: Tensor, points) -> Tensor:
    """Bilinearly sample an (H, W, C) map at continuous pixel (x, y) points.

    `points` is (P, 2) as a Tensor or ndarray; neighbors outside the map
    contribute zero. Differentiable in the map values and, when `points`
    is a Tensor, in the coordinates.
    """
    global SAMPLE_COUNTER
    pts_t = points if isinstance(points, Tensor) else None
    pts = points.data if pts_t is not None else np.asarray(points, dtype=np.float64)
    if fmap.ndim != 3:
        raise ShapeError(f"bilinear_sample expects (H, W, C) map, got {fmap.shape}")
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError(f"bilinear_sample expects (P, 2) points, got {pts.shape}")
    h, w, c = fmap.shape
    SAMPLE_COUNTER += pts.shape[0]

    x, y = pts[:, 0], pts[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            cx = x0 + dx
            cy = y0 + dy
            valid = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
            wx = fx if dx == 1 else 1.0 - fx
            wy = fy if dy == 1 else 1.0 - fy
            corners.append((np.clip(cx, 0, w - 1), np.clip(cy, 0, h - 1),
                            valid, wx * wy, dx, dy))

    vals = [fmap.data[cy, cx] * valid[:, None] for cx, cy, valid, _, _, _ in corners]
    data = sum(wgt[:, None] * v for (_, _, _, wgt, _, _), v in zip(corners, vals))
    data = data * (1.0 + _FAULT_SCALE)

    parents = [fmap] if pts_t is None else [fmap, pts_t]

    def backward(g):
        gmap = np.zeros_like(fmap.data)
        for (cx, cy, valid, wgt, _, _) in corners:
            contrib = g * (wgt * valid)[:, None]
            np.add.at(gmap, (cy, cx), contrib)
        fmap._accumulate(gmap * (1.0 + _FAULT_SCALE))
        if pts_t is not None:
            # d/dx = (v(x1) - v(x0)) blended over y, and symmetrically for y
            v00, v01, v10, v11 = vals  # order: (dy,dx) = (0,0),(0,1),(1,0),(1,1)
            dx_dir = (v01 - v00) * (1.0 - fy)[:, None] + (v11 - v10) * fy[:, None]
            dy_dir = (v10 - v00) * (1.0 - fx)[:, None] + (v11 - v01) * fx[:, None]
            gpts = np.stack([(g * dx_dir).sum(axis=1), (g * dy_dir).sum(axis=1)],
                            axis=1)
            pts_t._accumulate(gpts * (1.0 + _FAULT_SCALE))

    return Tensor._make(data, parents, backward)


class MSDeformAttention(Module):
    """Deformable attention sampling K points per head per pyramid level.

    `query_dim` feeds the offset/weight projections (it can exceed the
    feature dim when resampled queries are stacked head-wise), `embed_dim`
    is heads * head value width, `out_dim` the output projection target.
    """

    def __init__(self, query_dim: int, feat_dim: int, embed_dim: int,
                 out_dim: int, heads: int, levels: int, points: int,
                 rng: np.random.Generator):
        super().__init__()
        if embed_dim % heads:
            raise ShapeError(f"embed dim {embed_dim} not divisible by {heads} heads")
        self.heads, self.levels, self.points = heads, levels, points
        self.head_dim = embed_dim // heads
        self.embed_dim = embed_dim
        self.register("value_proj", Linear(feat_dim, embed_dim, rng))
        self.register("offset_proj",
                      Linear(query_dim, heads * levels * points * 2, rng,
                             zero_init=True))
        self.register("weight_proj",
                      Linear(query_dim, heads * levels * points, rng,
                             zero_init=True))
        self.register("output_proj", Linear(embed_dim, out_dim, rng))
        self.offset_proj.bias.data[:] = self._offset_ring().ravel()

    def _offset_ring(self) -> np.ndarray:
        """Initial sampling offsets: one direction per head, radius k+1 per point."""
        angles = 2.0 * np.pi * np.arange(self.heads) / self.heads
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        dirs /= np.abs(dirs).max(axis=-1, keepdims=True)
        ring = np.zeros((self.heads, self.levels, self.points, 2))
        for k in range(self.points):
            ring[:, :, k, :] = dirs[:, None, :] * (k + 1)
        return ring

    def __call__(self, queries: Tensor, ref_points, pyramid: FeaturePyramid) -> Tensor:
        n = queries.shape[0]
        m, lv, k = self.heads, self.levels, self.points
        if pyramid.num_levels != lv:
            raise ShapeError(
                f"pyramid has {pyramid.num_levels} levels, attention expects {lv}"
            )
        ref_t = ref_points if isinstance(ref_points, Tensor) else Tensor(ref_points)
        if ref_t.shape != (n, 2):
            raise ShapeError(f"reference points {ref_t.shape} != ({n}, 2)")

        offsets = self.offset_proj(queries).reshape(n, m, lv, k, 2)
        logits = self.weight_proj(queries).reshape(n, m, lv * k)
        weights = softmax(logits, axis=-1)  # per head over all L*K samples

        values = [self.value_proj(lvl.reshape(-1, pyramid.dim))
                  .reshape(lvl.shape[0], lvl.shape[1], m, self.head_dim)
                  for lvl in pyramid.levels]

        head_outputs = []
        for head in range(m):
            per_level = []
            for l, (h_l, w_l) in enumerate(pyramid.shapes):
                scale = Tensor(np.array([w_l, h_l], dtype=np.float64))
                base = ref_t * scale.reshape(1, 2) - 0.5
                loc = (base.reshape(n, 1, 2) + offsets[:, head, l, :, :]).reshape(n * k, 2)
                sampled = bilinear_sample(values[l][:, :, head, :], loc)
                per_level.append(sampled.reshape(n, k, self.head_dim))
            samples = concat(per_level, axis=1)              # (n, L*K, hd)
            wgt = weights[:, head, :].reshape(n, lv * k, 1)
            head_outputs.append((samples * wgt).sum(axis=1))  # (n, hd)
        out = concat(head_outputs, axis=1)                    # (n, embed)
        return self.output_proj(out)
