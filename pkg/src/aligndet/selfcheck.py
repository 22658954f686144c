"""Numeric self-checks: gradient suite, loop-oracle comparisons, metric fixtures.

Each check either returns quietly or raises; the runner prints one line per
check and reports overall pass/fail.
"""

from __future__ import annotations

import traceback

import numpy as np

from . import reference
from .aligner import QueryReweighter, roi_align
from .annotations import CocoDataset
from .attention import FeaturePyramid, MSDeformAttention, bilinear_sample
from .boxes import cxcywh_to_xyxy, xyxy_to_cxcywh
from .coco_eval import evaluate
from .gradcheck import check_gradients
from .matching import LossWeights, hungarian_match, layer_loss
from .model import DetectorConfig, PredictionHeads
from .tensor import Tensor, layer_norm, log_softmax, softmax

REL_TOL = 1e-4


def _rng(seed=0):
    return np.random.default_rng(seed)


def check_grad_matmul():
    rng = _rng(1)
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 3))
    check_gradients(lambda t: (t["a"] @ t["b"]).sum() + ((t["a"] @ t["b"]) ** 2).sum(),
                    {"a": a, "b": b}, rel_tol=REL_TOL)


def check_grad_softmax():
    rng = _rng(2)
    x = rng.normal(size=(3, 6))
    w = rng.normal(size=(3, 6))
    check_gradients(lambda t: (softmax(t["x"], axis=-1) * w).sum(),
                    {"x": x}, rel_tol=REL_TOL)


def check_grad_sigmoid():
    rng = _rng(3)
    x = rng.normal(size=(4, 4))
    check_gradients(lambda t: (t["x"].sigmoid() ** 2).sum(), {"x": x},
                    rel_tol=REL_TOL)


def check_grad_layer_norm():
    rng = _rng(4)
    x = rng.normal(size=(3, 8))
    gamma = rng.normal(size=8)
    beta = rng.normal(size=8)
    w = rng.normal(size=(3, 8))
    check_gradients(
        lambda t: (layer_norm(t["x"], t["gamma"], t["beta"]) * w).sum(),
        {"x": x, "gamma": gamma, "beta": beta}, rel_tol=1e-4)


def check_grad_bilinear():
    rng = _rng(5)
    fmap = rng.normal(size=(5, 6, 3))
    pts = rng.uniform(0.3, 4.3, size=(7, 2))
    w = rng.normal(size=(7, 3))
    check_gradients(
        lambda t: (bilinear_sample(t["fmap"], t["pts"]) * w).sum(),
        {"fmap": fmap, "pts": pts}, rel_tol=REL_TOL)


def _random_attention(rng, query_dim=6, feat_dim=4, embed_dim=8, out_dim=6,
                      heads=2, levels=2, points=2):
    attn = MSDeformAttention(query_dim, feat_dim, embed_dim, out_dim,
                             heads, levels, points, rng)
    # randomize the zero/ring inits so gradchecks sit away from lattice lines
    attn.offset_proj.weight.data[:] = rng.normal(scale=0.3,
                                                 size=attn.offset_proj.weight.shape)
    attn.offset_proj.bias.data[:] = rng.uniform(-0.7, 0.7,
                                                size=attn.offset_proj.bias.shape)
    attn.weight_proj.weight.data[:] = rng.normal(scale=0.3,
                                                 size=attn.weight_proj.weight.shape)
    return attn


def check_grad_ms_deform_attn():
    rng = _rng(6)
    attn = _random_attention(rng)
    maps = [rng.normal(size=(6, 7, 4)), rng.normal(size=(3, 4, 4))]
    queries = rng.normal(size=(3, 6))
    ref = rng.uniform(0.25, 0.75, size=(3, 2))
    w = rng.normal(size=(3, 6))

    def loss(t):
        pyramid = FeaturePyramid([t["m0"], t["m1"]])
        return (attn(t["q"], t["ref"], pyramid) * w).sum()

    check_gradients(loss, {"q": queries, "ref": ref, "m0": maps[0],
                           "m1": maps[1]}, rel_tol=REL_TOL)


def check_grad_roi_align():
    rng = _rng(7)
    fmap = rng.normal(size=(6, 6, 3))
    boxes = np.column_stack([rng.uniform(0.3, 0.7, 4), rng.uniform(0.3, 0.7, 4),
                             rng.uniform(0.2, 0.4, 4), rng.uniform(0.2, 0.4, 4)])
    w = rng.normal(size=(4, 3, 3, 3))
    check_gradients(
        lambda t: (roi_align(t["fmap"], t["boxes"], 3) * w).sum(),
        {"fmap": fmap, "boxes": boxes}, rel_tol=REL_TOL)


def check_grad_reweight():
    rng = _rng(8)
    rw = QueryReweighter(dim=5, num_points=3, rng=rng)
    old_c = rng.normal(size=(2, 5))
    old_p = rng.normal(size=(2, 5))
    new_c = rng.normal(size=(2, 3, 5))
    new_p = rng.normal(size=(2, 3, 5))
    w = rng.normal(size=(2, 3, 5))

    def loss(t):
        c, p = rw(t["oc"], t["op"], t["nc"], t["np"])
        return (c * w).sum() + (p * w).sum()

    check_gradients(loss, {"oc": old_c, "op": old_p, "nc": new_c, "np": new_p},
                    rel_tol=REL_TOL)


def check_grad_heads():
    rng = _rng(9)
    cfg = DetectorConfig(dim=8, num_classes=2, backbone_channels=(4, 6, 8, 10, 12, 14))
    heads = PredictionHeads(cfg, rng)
    content = rng.normal(size=(4, 8))
    w_logits = rng.normal(size=(4, 3))
    w_boxes = rng.normal(size=(4, 4))

    def loss(t):
        out = heads(t["content"])
        return (out["scores"] * w_logits).sum() + (out["boxes"] * w_boxes).sum()

    check_gradients(loss, {"content": content}, rel_tol=REL_TOL)


def check_grad_set_loss():
    rng = _rng(10)
    logits = rng.normal(size=(3, 4))
    boxes_raw = rng.normal(size=(3, 4))
    gt_labels = np.array([1])
    gt_boxes = np.array([[0.5, 0.4, 0.3, 0.25]])

    def loss(t):
        return layer_loss(t["logits"], t["boxes_raw"].sigmoid(), gt_labels,
                          gt_boxes, LossWeights())[0]

    check_gradients(loss, {"logits": logits, "boxes_raw": boxes_raw},
                    rel_tol=REL_TOL)


def check_oracle_ms_deform_attn():
    rng = _rng(11)
    for trial in range(20):
        attn = _random_attention(rng, query_dim=8, feat_dim=8, embed_dim=8,
                                 out_dim=8, heads=2, levels=4, points=2)
        maps = [rng.normal(size=(8 // 2 ** l + 1, 9 // 2 ** l + 1, 8))
                for l in range(4)]
        queries = rng.normal(size=(3, 8))
        ref = rng.uniform(0, 1, size=(3, 2))
        got = attn(Tensor(queries), ref, FeaturePyramid([Tensor(m) for m in maps]))
        want = reference.ms_deform_attn_ref(
            queries, ref, maps, reference.extract_attention_weights(attn))
        err = np.abs(got.data - want).max()
        if err > 1e-10:
            raise AssertionError(f"trial {trial}: deformable attention deviates "
                                 f"from loop oracle by {err:.2e}")


def check_oracle_roi_align():
    rng = _rng(12)
    for trial in range(20):
        fmap = rng.normal(size=(7, 9, 4))
        boxes = np.column_stack([rng.uniform(0, 1, 5), rng.uniform(0, 1, 5),
                                 rng.uniform(0, 0.6, 5), rng.uniform(0, 0.6, 5)])
        got = roi_align(Tensor(fmap), Tensor(boxes), 4)
        want = reference.roi_align_ref(fmap, boxes, 4)
        err = np.abs(got.data - want).max()
        if err > 1e-10:
            raise AssertionError(f"trial {trial}: roi_align deviates from "
                                 f"loop oracle by {err:.2e}")


def check_oracle_hungarian():
    rng = _rng(13)
    for trial in range(50):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 7))
        cost = rng.normal(size=(n, m))
        pairs = hungarian_match(cost)
        total = sum(cost[i, j] for i, j in pairs)
        want = reference.hungarian_brute_force(cost)
        if abs(total - want) > 1e-9:
            raise AssertionError(f"trial {trial}: assignment cost {total} != "
                                 f"brute-force optimum {want}")


def _single_box_dataset(iou_partner_h: float) -> tuple[list, CocoDataset]:
    gt = CocoDataset(
        images=[{"id": 1, "file_name": "a.ppm", "width": 100, "height": 100}],
        annotations=[{"id": 1, "image_id": 1, "category_id": 1,
                      "bbox": [10, 10, 10, 10], "area": 100, "iscrowd": 0}],
        categories=[{"id": 1, "name": "thing"}],
    )
    preds = [{"image_id": 1, "category_id": 1,
              "bbox": [10, 10, 10, iou_partner_h], "score": 0.9}]
    return preds, gt


def check_map_fixtures():
    preds, gt = _single_box_dataset(10)
    res = evaluate(preds, gt)
    if not (res.map == res.map50 == res.map75 == 1.0):
        raise AssertionError(f"perfect detection gave {res.headline()}")
    # overlap chosen so IoU is exactly 15/25 = 0.6
    preds, gt = _single_box_dataset(25)
    preds[0]["bbox"] = [10, 10, 10, 25]
    gt.annotations[0]["bbox"] = [10, 20, 10, 15]
    gt.annotations[0]["area"] = 150
    res = evaluate(preds, gt)
    if abs(res.map - 0.3) > 1e-12 or res.map50 != 1.0 or res.map75 != 0.0:
        raise AssertionError(f"IoU-0.6 case gave {res.headline()}")


def check_box_roundtrip():
    rng = _rng(14)
    cx = rng.uniform(0.3, 0.7, 100)
    cy = rng.uniform(0.3, 0.7, 100)
    w = rng.uniform(0.05, 0.5, 100)
    h = rng.uniform(0.05, 0.5, 100)
    boxes = np.column_stack([cx, cy, w, h])
    back = xyxy_to_cxcywh(cxcywh_to_xyxy(boxes))
    if np.abs(back - boxes).max() > 1e-9:
        raise AssertionError("cxcywh round trip exceeded 1e-9")


CHECKS = [
    ("grad-matmul", check_grad_matmul),
    ("grad-softmax", check_grad_softmax),
    ("grad-sigmoid", check_grad_sigmoid),
    ("grad-layer-norm", check_grad_layer_norm),
    ("grad-bilinear-sample", check_grad_bilinear),
    ("grad-ms-deform-attn", check_grad_ms_deform_attn),
    ("grad-roi-align", check_grad_roi_align),
    ("grad-reweight", check_grad_reweight),
    ("grad-heads", check_grad_heads),
    ("grad-set-loss", check_grad_set_loss),
    ("oracle-ms-deform-attn", check_oracle_ms_deform_attn),
    ("oracle-roi-align", check_oracle_roi_align),
    ("oracle-hungarian", check_oracle_hungarian),
    ("fixture-map-evaluator", check_map_fixtures),
    ("box-roundtrip", check_box_roundtrip),
]


def run_selfcheck(verbose: bool = True) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            fn()
            results.append((name, True, ""))
        except Exception as exc:  # report every failure, keep going
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
            if verbose:
                traceback.print_exc()
    if verbose:
        width = max(len(name) for name, _, _ in results)
        for name, ok, detail in results:
            status = "PASS" if ok else "FAIL"
            line = f"{name:<{width}}  {status}"
            if detail:
                line += f"  {detail}"
            print(line)
        failed = sum(1 for _, ok, _ in results if not ok)
        print(f"{len(results) - failed}/{len(results)} checks passed")
    return results
