"""Semantic-aligner block used inside each decoder layer.

Per layer: reference boxes are projected from the query positional
embeddings, region features are pooled with ROIAlign from the layer's
routed pyramid level, a small predictor places M salient points inside
each box whose sampled features become the new queries, and sigmoid gates
blend old and new queries before the head-wise flatten feeds
cross-attention.
"""

from __future__ import annotations

import numpy as np

from .attention import bilinear_sample
from .nn import MLP, Linear, Module, sinusoidal_embedding
from .tensor import ShapeError, Tensor, concat


def roi_align(level_features: Tensor, ref_boxes: Tensor, grid: int) -> Tensor:
    """Sample a grid x grid field of bin-center points per normalized box.

    `level_features` is (H, W, d); `ref_boxes` is (N, 4) normalized cxcywh.
    One bilinear sample per bin; a degenerate box collapses every bin onto
    the box center. Returns (N, grid, grid, d).
    """
    h, w, d = level_features.shape
    n = ref_boxes.shape[0]
    g = grid
    fx = ((np.arange(g) + 0.5) / g)[None, :].repeat(g, axis=0)  # varies over cols
    fy = ((np.arange(g) + 0.5) / g)[:, None].repeat(g, axis=1)  # varies over rows

    cx = ref_boxes[:, 0].reshape(n, 1, 1)
    cy = ref_boxes[:, 1].reshape(n, 1, 1)
    bw = ref_boxes[:, 2].reshape(n, 1, 1)
    bh = ref_boxes[:, 3].reshape(n, 1, 1)
    # box corner in level pixel coordinates, pixel centers at integers
    x = (cx - bw * 0.5 + bw * Tensor(fx)) * w - 0.5
    y = (cy - bh * 0.5 + bh * Tensor(fy)) * h - 0.5
    pts = concat([x.reshape(n, g, g, 1), y.reshape(n, g, g, 1)], axis=3)
    sampled = bilinear_sample(level_features, pts.reshape(n * g * g, 2))
    return sampled.reshape(n, g, g, d)


class RefBoxProjection(Module):
    """Query positional embedding -> normalized (cx, cy, w, h) via sigmoid."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.register("proj", Linear(dim, 4, rng))

    def __call__(self, pos: Tensor) -> Tensor:
        return self.proj(pos).sigmoid()


class RefPointProjection(Module):
    """Reference box -> normalized (x, y) reference point, learned.

    Deliberately not the box center: the projection is free to move the
    cross-attention anchor anywhere in the unit square.
    """

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.register("proj", Linear(4, 2, rng))

    def __call__(self, ref_boxes: Tensor) -> Tensor:
        return self.proj(ref_boxes).sigmoid()


class SalientResampler(Module):
    """Predict M in-box points per query and sample new queries there."""

    def __init__(self, dim: int, grid: int, num_points: int, hidden: int,
                 rng: np.random.Generator):
        super().__init__()
        self.dim, self.grid, self.num_points = dim, grid, num_points
        predictor = MLP([grid * grid * dim, hidden, num_points * 2], rng)
        # zero final layer: all salient points start at the box center
        predictor.layers[-1].weight.data[:] = 0.0
        predictor.layers[-1].bias.data[:] = 0.0
        self.register("predictor", predictor)

    def __call__(self, regions: Tensor, ref_boxes: Tensor,
                 level_features: Tensor) -> tuple[Tensor, Tensor]:
        n = regions.shape[0]
        m = self.num_points
        h, w, d = level_features.shape
        frac = self.predictor(regions.reshape(n, -1)).sigmoid().reshape(n, m, 2)
        corner = concat([(ref_boxes[:, 0] - ref_boxes[:, 2] * 0.5).reshape(n, 1, 1),
                         (ref_boxes[:, 1] - ref_boxes[:, 3] * 0.5).reshape(n, 1, 1)],
                        axis=2)
        extent = concat([ref_boxes[:, 2].reshape(n, 1, 1),
                         ref_boxes[:, 3].reshape(n, 1, 1)], axis=2)
        points = corner + frac * extent                       # normalized, in-box
        pixel = points * Tensor(np.array([w, h], dtype=np.float64)) - 0.5
        content = bilinear_sample(level_features, pixel.reshape(n * m, 2))
        pos = sinusoidal_embedding(points.reshape(n * m, 2), d)
        return content.reshape(n, m, d), pos.reshape(n, m, d)


class QueryReweighter(Module):
    """Sigmoid gates blending old queries (broadcast over M) with new ones."""

    def __init__(self, dim: int, num_points: int, rng: np.random.Generator):
        super().__init__()
        self.dim, self.num_points = dim, num_points
        self.register("content_gate", Linear(dim, num_points * dim, rng))
        self.register("pos_gate", Linear(dim, num_points * dim, rng))

    def __call__(self, old_content: Tensor, old_pos: Tensor,
                 new_content: Tensor, new_pos: Tensor) -> tuple[Tensor, Tensor]:
        n, m, d = new_content.shape
        if m != self.num_points or d != self.dim:
            raise ShapeError(f"reweight expects (N, {self.num_points}, {self.dim}), "
                             f"got {new_content.shape}")
        gc = self.content_gate(old_content).sigmoid().reshape(n, m, d)
        gp = self.pos_gate(old_content).sigmoid().reshape(n, m, d)
        content = gc * new_content + (1.0 - gc) * old_content.reshape(n, 1, d)
        pos = gp * new_pos + (1.0 - gp) * old_pos.reshape(n, 1, d)
        return content, pos


def flatten_heads(queries: Tensor) -> Tensor:
    """(N, M, d) -> (N, M*d), row-major: element (n, m, c) lands at m*d + c."""
    n, m, d = queries.shape
    return queries.reshape(n, m * d)


class SemanticAligner(Module):
    """Full SAM block for one decoder layer."""

    def __init__(self, dim: int, num_points: int, grid: int, hidden: int,
                 rng: np.random.Generator):
        super().__init__()
        self.grid = grid
        self.register("ref_box_proj", RefBoxProjection(dim, rng))
        self.register("ref_point_proj", RefPointProjection(rng))
        self.register("resampler", SalientResampler(dim, grid, num_points, hidden, rng))
        self.register("reweighter", QueryReweighter(dim, num_points, rng))

    def __call__(self, content: Tensor, pos: Tensor, level_features: Tensor):
        ref_boxes = self.ref_box_proj(pos)
        ref_points = self.ref_point_proj(ref_boxes)
        regions = roi_align(level_features, ref_boxes, self.grid)
        new_content, new_pos = self.resampler(regions, ref_boxes, level_features)
        blended_content, blended_pos = self.reweighter(content, pos,
                                                       new_content, new_pos)
        return {
            "ref_boxes": ref_boxes,
            "ref_points": ref_points,
            "content": flatten_heads(blended_content),
            "pos": flatten_heads(blended_pos),
        }
