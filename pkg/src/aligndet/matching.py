"""Bipartite matching between predictions and ground truth, and the set loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .boxes import cxcywh_to_xyxy, cxcywh_to_xyxy_t, giou_matrix, giou_pairs_t
from .tensor import Tensor, log_softmax


@dataclass
class LossWeights:
    cls: float = 1.0
    l1: float = 5.0
    giou: float = 2.0
    noobj: float = 0.1     # down-weight for the no-object class term


def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one assignment of an n x m cost matrix.

    Returns min(n, m) (row, col) pairs sorted by row index. Empty matrices
    yield an empty assignment.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian_match requires finite cost entries")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def match_cost(pred_probs: np.ndarray, pred_boxes: np.ndarray,
               gt_labels: np.ndarray, gt_boxes: np.ndarray,
               weights: LossWeights) -> np.ndarray:
    """Cost matrix (num_preds x num_gt) for the matcher.

    cost(i, j) = -w_cls * p_i(class_j) + w_l1 * |b_i - b_j|_1
                 - w_giou * giou(b_i, b_j), boxes normalized cxcywh.
    """
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_labels = np.asarray(gt_labels, dtype=np.int64)
    cost_cls = -pred_probs[:, gt_labels]
    cost_l1 = np.abs(pred_boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=-1)
    cost_giou = -giou_matrix(cxcywh_to_xyxy(pred_boxes), cxcywh_to_xyxy(gt_boxes))
    return weights.cls * cost_cls + weights.l1 * cost_l1 + weights.giou * cost_giou


def layer_loss(logits: Tensor, boxes: Tensor, gt_labels: np.ndarray,
               gt_boxes: np.ndarray, weights: LossWeights) -> tuple[Tensor, dict]:
    """Set loss for one prediction layer on one image.

    Matched queries pay cross-entropy plus weighted L1 and (1 - giou) box
    terms; unmatched queries pay a no-object cross-entropy scaled by
    ``weights.noobj``. With no ground truth the loss is pure no-object.
    """
    n, num_cls_plus1 = logits.shape
    noobj_class = num_cls_plus1 - 1
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)

    log_probs = log_softmax(logits, axis=-1)
    target = np.full(n, noobj_class, dtype=np.int64)
    class_weight = np.full(n, weights.noobj)

    parts = {"cls": 0.0, "l1": 0.0, "giou": 0.0, "matched": 0}
    box_terms = None
    if len(gt_labels) > 0:
        cost = match_cost(np.exp(log_probs.data), boxes.data, gt_labels,
                          gt_boxes, weights)
        pairs = hungarian_match(cost)
        pred_idx = np.array([p for p, _ in pairs], dtype=np.int64)
        gt_idx = np.array([g for _, g in pairs], dtype=np.int64)
        target[pred_idx] = gt_labels[gt_idx]
        class_weight[pred_idx] = 1.0

        matched_boxes = boxes[pred_idx, :]
        matched_gt = gt_boxes[gt_idx]
        l1 = abs_diff_sum(matched_boxes, matched_gt)
        gious = giou_pairs_t(cxcywh_to_xyxy_t(matched_boxes),
                             cxcywh_to_xyxy_t(Tensor(matched_gt)))
        box_terms = weights.l1 * l1.sum() + weights.giou * (1.0 - gious).sum()
        parts["l1"] = float(l1.sum().item())
        parts["giou"] = float((1.0 - gious).sum().item())
        parts["matched"] = len(pairs)

    picked = log_probs[np.arange(n), target]
    cls_loss = (-picked * Tensor(class_weight)).sum() * weights.cls
    parts["cls"] = float(cls_loss.item())
    total = cls_loss if box_terms is None else cls_loss + box_terms
    return total, parts


def abs_diff_sum(a: Tensor, b: np.ndarray) -> Tensor:
    """Row-wise L1 distance |a - b| summed over the last axis."""
    diff = a - Tensor(b)
    return diff.maximum(-diff).sum(axis=-1)


def set_loss(layer_outputs: list[dict], gt_labels: np.ndarray,
             gt_boxes: np.ndarray, weights: LossWeights | None = None,
             aux: bool = True) -> tuple[Tensor, dict]:
    """Training loss summed over decoder layers for a single image.

    ``layer_outputs`` is the per-layer list from the detector forward pass
    (each entry carries 'logits' and 'boxes'); auxiliary supervision over
    intermediate layers is on by default.
    """
    weights = weights or LossWeights()
    chosen = layer_outputs if aux else layer_outputs[-1:]
    total = None
    diag = {"cls": 0.0, "l1": 0.0, "giou": 0.0, "matched": 0}
    for layer in chosen:
        loss, parts = layer_loss(layer["logits"], layer["boxes"],
                                 gt_labels, gt_boxes, weights)
        total = loss if total is None else total + loss
        for key in ("cls", "l1", "giou"):
            diag[key] += parts[key]
        diag["matched"] += parts["matched"]
    return total, diag
