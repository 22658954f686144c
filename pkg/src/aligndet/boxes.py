"""Bounding-box representations, conversions, and overlap measures.

Two conventions live here:
  * normalized center boxes (cx, cy, w, h) in [0, 1], used by the model;
  * absolute corner boxes (x1, y1, x2, y2) in pixels, used by losses and
    the evaluator.

Mask-derived boxes use inclusive pixel spans: width = x_max - x_min + 1.
Numpy variants serve matching/evaluation; the Tensor variant of GIoU is
differentiable for use inside the training loss.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat


# ----------------------------------------------------------------------
# numpy geometry


def cxcywh_to_xyxy(boxes: np.ndarray, img_w: float = 1.0,
                   img_h: float = 1.0) -> np.ndarray:
    """Convert (..., 4) center boxes to corner boxes, clamped to the image."""
    boxes = np.asarray(boxes, dtype=np.float64)
    cx, cy, w, h = boxes[..., 0], boxes[..., 1], boxes[..., 2], boxes[..., 3]
    x1 = np.clip((cx - w / 2) * img_w, 0.0, img_w)
    y1 = np.clip((cy - h / 2) * img_h, 0.0, img_h)
    x2 = np.clip((cx + w / 2) * img_w, 0.0, img_w)
    y2 = np.clip((cy + h / 2) * img_h, 0.0, img_h)
    return np.stack([x1, y1, x2, y2], axis=-1)


def xyxy_to_cxcywh(boxes: np.ndarray, img_w: float = 1.0,
                   img_h: float = 1.0) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    x1, y1, x2, y2 = boxes[..., 0], boxes[..., 1], boxes[..., 2], boxes[..., 3]
    return np.stack([
        (x1 + x2) / (2 * img_w),
        (y1 + y2) / (2 * img_h),
        (x2 - x1) / img_w,
        (y2 - y1) / img_h,
    ], axis=-1)


def xywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    out = boxes.copy()
    out[..., 2] = boxes[..., 0] + boxes[..., 2]
    out[..., 3] = boxes[..., 1] + boxes[..., 3]
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of corner boxes: (n, 4) x (m, 4) -> (n, m).

    Degenerate (zero-area) overlaps yield 0 rather than NaN.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def iou(a, b) -> float:
    return float(iou_matrix(np.asarray(a).reshape(1, 4),
                            np.asarray(b).reshape(1, 4))[0, 0])


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU of corner boxes, in (-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ious = iou_matrix(a, b)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    ex1 = np.minimum(a[:, None, 0], b[None, :, 0])
    ey1 = np.minimum(a[:, None, 1], b[None, :, 1])
    ex2 = np.maximum(a[:, None, 2], b[None, :, 2])
    ey2 = np.maximum(a[:, None, 3], b[None, :, 3])
    enclose = (ex2 - ex1) * (ey2 - ey1)
    with np.errstate(divide="ignore", invalid="ignore"):
        penalty = np.where(enclose > 0, (enclose - union) / np.where(enclose > 0, enclose, 1.0), 0.0)
    return ious - penalty


def giou(a, b) -> float:
    return float(giou_matrix(np.asarray(a).reshape(1, 4),
                             np.asarray(b).reshape(1, 4))[0, 0])


# ----------------------------------------------------------------------
# differentiable geometry on tensors


def cxcywh_to_xyxy_t(boxes: Tensor) -> Tensor:
    """Tensor variant, unclamped: (n, 4) center boxes -> corner boxes."""
    cx = boxes[:, 0:1]
    cy = boxes[:, 1:2]
    hw = boxes[:, 2:3] * 0.5
    hh = boxes[:, 3:4] * 0.5
    return concat([cx - hw, cy - hh, cx + hw, cy + hh], axis=1)


def giou_pairs_t(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise GIoU of matched corner-box rows: (n, 4), (n, 4) -> (n,).

    Differentiable almost everywhere; zero-area boxes fall back to the
    enclosure penalty alone (IoU term is 0 there).
    """
    eps = 1e-9
    zero = Tensor(0.0)
    area_a = (a[:, 2] - a[:, 0]).maximum(zero) * (a[:, 3] - a[:, 1]).maximum(zero)
    area_b = (b[:, 2] - b[:, 0]).maximum(zero) * (b[:, 3] - b[:, 1]).maximum(zero)
    iw = (a[:, 2].minimum(b[:, 2]) - a[:, 0].maximum(b[:, 0])).maximum(zero)
    ih = (a[:, 3].minimum(b[:, 3]) - a[:, 1].maximum(b[:, 1])).maximum(zero)
    inter = iw * ih
    union = area_a + area_b - inter
    ew = a[:, 2].maximum(b[:, 2]) - a[:, 0].minimum(b[:, 0])
    eh = a[:, 3].maximum(b[:, 3]) - a[:, 1].minimum(b[:, 1])
    enclose = ew * eh
    return inter / (union + eps) - (enclose - union) / (enclose + eps)
