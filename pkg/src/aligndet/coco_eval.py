"""COCO-style detection metrics: mAP over IoU 0.50:0.05:0.95, mAP@0.5, mAP@0.75.

Per category and threshold, detections are greedily matched to ground
truth in descending score order; AP is 101-point interpolated precision
averaged over the recall grid. Categories without ground truth are
skipped, and the aggregate is the mean over categories then thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotations import CocoDataset
from .boxes import iou_matrix, xywh_to_xyxy

IOU_THRESHOLDS = np.arange(50, 100, 5) / 100.0
RECALL_GRID = np.arange(0, 101) / 100.0


@dataclass
class EvalResult:
    map: float
    map50: float
    map75: float
    per_category: dict = field(default_factory=dict)   # cat_id -> AP per threshold
    pr_curves: dict = field(default_factory=dict)      # (cat_id, thr) -> 101 precisions

    def headline(self) -> dict:
        return {"mAP": self.map, "mAP@0.5": self.map50, "mAP@0.75": self.map75}


def load_results(path) -> list[dict]:
    """COCO results JSON: a list of {image_id, category_id, bbox, score}."""
    records = json.loads(Path(path).read_text())
    if not isinstance(records, list):
        raise ValueError(f"{path}: results file must be a JSON list")
    for i, rec in enumerate(records):
        for key in ("image_id", "category_id", "bbox", "score"):
            if key not in rec:
                raise ValueError(f"{path}: result record {i} missing '{key}'")
    return records


def _ap_from_matches(tp_flags: np.ndarray, num_gt: int) -> tuple[float, np.ndarray]:
    """101-point interpolated AP from TP flags in score order."""
    if num_gt == 0:
        return float("nan"), np.zeros(len(RECALL_GRID))
    if len(tp_flags) == 0:
        return 0.0, np.zeros(len(RECALL_GRID))
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(~tp_flags)
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # precision envelope: best precision at recall >= r
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    indices = np.searchsorted(recall, RECALL_GRID, side="left")
    interpolated = np.where(indices < len(precision), precision[np.minimum(
        indices, len(precision) - 1)], 0.0)
    return float(interpolated.mean()), interpolated


def evaluate(predictions: list[dict], gt: CocoDataset) -> EvalResult:
    """Score per-image predictions against a COCO dataset.

    ``predictions`` is a flat list of {image_id, category_id, bbox [x,y,w,h],
    score}. Unknown category ids raise a validation error.
    """
    gt.validate()
    known_cats = {c["id"] for c in gt.categories}
    for i, pred in enumerate(predictions):
        if pred["category_id"] not in known_cats:
            raise ValueError(
                f"prediction {i} has unknown category id {pred['category_id']}")

    gt_by_img_cat: dict = {}
    gt_counts: dict = {}
    for ann in gt.annotations:
        key = (ann["image_id"], ann["category_id"])
        gt_by_img_cat.setdefault(key, []).append(ann["bbox"])
        gt_counts[ann["category_id"]] = gt_counts.get(ann["category_id"], 0) + 1

    preds_by_cat: dict = {}
    for i, pred in enumerate(predictions):
        preds_by_cat.setdefault(pred["category_id"], []).append((i, pred))

    per_category: dict = {}
    pr_curves: dict = {}
    for cat_id in sorted(known_cats):
        num_gt = gt_counts.get(cat_id, 0)
        if num_gt == 0:
            continue    # COCO convention: category without GT does not count
        cat_preds = preds_by_cat.get(cat_id, [])
        # deterministic order: score descending, then original record order
        cat_preds.sort(key=lambda item: (-item[1]["score"], item[0]))
        ap_per_thr = []
        for thr in IOU_THRESHOLDS:
            matched: dict = {}
            tp_flags = np.zeros(len(cat_preds), dtype=bool)
            for rank, (_, pred) in enumerate(cat_preds):
                img_id = pred["image_id"]
                gt_boxes = gt_by_img_cat.get((img_id, cat_id), [])
                if not gt_boxes:
                    continue
                used = matched.setdefault(img_id, set())
                ious = iou_matrix(xywh_to_xyxy(np.array([pred["bbox"]])),
                                  xywh_to_xyxy(np.array(gt_boxes)))[0]
                best_idx, best_iou = -1, -1.0
                for j, value in enumerate(ious):
                    if j in used or value < thr:
                        continue
                    # strict improvement: IoU ties go to the lowest GT index
                    if value > best_iou:
                        best_idx, best_iou = j, value
                if best_idx >= 0:
                    used.add(best_idx)
                    tp_flags[rank] = True
            ap, curve = _ap_from_matches(tp_flags, num_gt)
            ap_per_thr.append(ap)
            pr_curves[(cat_id, float(thr))] = curve
        per_category[cat_id] = np.array(ap_per_thr)

    if not per_category:
        return EvalResult(0.0, 0.0, 0.0, {}, pr_curves)
    ap_matrix = np.stack(list(per_category.values()))   # (cats, thresholds)
    means = ap_matrix.mean(axis=0)
    return EvalResult(
        map=float(means.mean()),
        map50=float(means[0]),
        map75=float(means[IOU_THRESHOLDS.tolist().index(0.75)]),
        per_category={k: v.tolist() for k, v in per_category.items()},
        pr_curves=pr_curves,
    )
