"""Command-line entry point.

Subcommands: annotate-nostril, annotate-glottis, synth, train, eval,
selfcheck. Exit codes: 0 success, 1 runtime/numeric failure, 2 usage error.
The DETR_KIT_THREADS environment variable caps internal (BLAS) parallelism.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("aligndet")


def _limit_threads() -> None:
    threads = os.environ.get("DETR_KIT_THREADS")
    if not threads:
        return
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(int(threads))
    except Exception as exc:
        log.debug("could not cap threads to %s: %s", threads, exc)


def _load_run_config(args) -> "RunConfig":
    from .train import RunConfig
    if args.config:
        run = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        run = RunConfig()
    # flags override file values
    for attr in ("epochs", "batch_size", "seed", "lr_backbone", "lr_detector"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(run, attr, value)
    return run


def cmd_annotate_nostril(args) -> int:
    from .annotations import annotate_keypoints, write_coco
    dataset = annotate_keypoints(args.keypoints, args.images,
                                 box_w=args.box_w, box_h=args.box_h,
                                 point_indices=args.point_indices)
    if not dataset.images:
        log.warning("no keypoint files produced any images")
    write_coco(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset.images)} images, "
          f"{len(dataset.annotations)} annotations")
    return 0


def cmd_annotate_glottis(args) -> int:
    from .annotations import annotate_masks, write_coco
    dataset = annotate_masks(args.masks, mode=args.mode)
    if not dataset.images:
        log.warning("no PGM masks found")
    write_coco(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset.images)} images, "
          f"{len(dataset.annotations)} annotations")
    return 0


def cmd_synth(args) -> int:
    from .annotations import generate_synthetic, write_coco
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, dataset = generate_synthetic(seed=args.seed, count=args.count,
                                    image_size=(args.size, args.size),
                                    out_dir=out)
    write_coco(dataset, out / "annotations.json")
    print(f"wrote {args.count} images and annotations.json to {out}")
    return 0


def cmd_train(args) -> int:
    from .annotations import read_coco
    from .train import train
    run = _load_run_config(args)
    dataset = read_coco(args.dataset)
    final = train(run, dataset, args.images, args.out)
    print(f"training complete; final checkpoint at {final}")
    return 0


def _predictions_from_checkpoint(checkpoint, dataset, image_dir) -> list[dict]:
    from .annotations import read_ppm
    from .model import load_checkpoint
    detector, _ = load_checkpoint(checkpoint)
    cats = sorted(c["id"] for c in dataset.categories)
    preds = []
    for img in dataset.images:
        pixels = read_ppm(Path(image_dir) / img["file_name"])
        image = pixels.astype(np.float64).transpose(2, 0, 1) / 255.0
        det = detector.detect(image)
        for bbox, label, score in zip(det["boxes_xywh"], det["labels"],
                                      det["scores"]):
            preds.append({"image_id": img["id"],
                          "category_id": cats[int(label)],
                          "bbox": [float(v) for v in bbox],
                          "score": float(score)})
    return preds


def cmd_eval(args) -> int:
    from .annotations import read_coco
    from .coco_eval import evaluate, load_results
    dataset = read_coco(args.dataset)
    if args.predictions:
        preds = load_results(args.predictions)
    else:
        preds = _predictions_from_checkpoint(args.checkpoint, dataset,
                                             args.images)
    result = evaluate(preds, dataset)
    headline = result.headline()
    header = f"{'mAP':>8} {'mAP@0.5':>8} {'mAP@0.75':>8}"
    print(header)
    print(f"{headline['mAP']:>8.3f} {headline['mAP@0.5']:>8.3f} "
          f"{headline['mAP@0.75']:>8.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps(headline, indent=2))
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck
    results = run_selfcheck(verbose=True)
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aligndet",
        description="Deformable-attention landmark detector toolkit",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate-nostril",
                       help="expand keypoints into bounding-box annotations")
    p.add_argument("--keypoints", required=True, help="directory of .pts files")
    p.add_argument("--images", required=True, help="directory of .pgm images")
    p.add_argument("--box-w", type=float, required=True,
                   help="box width in pixels (20 suits 384x286 face frames)")
    p.add_argument("--box-h", type=float, required=True,
                   help="box height in pixels (14 suits 384x286 face frames)")
    p.add_argument("--point-indices", type=int, nargs="*", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate_nostril)

    p = sub.add_parser("annotate-glottis",
                       help="boxes from segmentation masks")
    p.add_argument("--masks", required=True, help="directory of P5 PGM masks")
    p.add_argument("--mode", choices=("global", "component"), default="global")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate_glottis)

    p = sub.add_parser("synth", help="generate a synthetic COCO dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--dataset", required=True, help="COCO annotations JSON")
    p.add_argument("--images", required=True, help="directory of PPM images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="RunConfig JSON; flags override it")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr-backbone", type=float, default=None)
    p.add_argument("--lr-detector", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a results file")
    p.add_argument("--dataset", required=True, help="COCO annotations JSON")
    p.add_argument("--checkpoint", help="detector checkpoint (.npz)")
    p.add_argument("--images", help="image directory (with --checkpoint)")
    p.add_argument("--predictions", help="COCO results JSON instead of a checkpoint")
    p.add_argument("--out", help="write headline metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selfcheck", help="run numeric self-checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    _limit_threads()
    if args.command == "eval" and not args.predictions:
        if not (args.checkpoint and args.images):
            parser.error("eval needs either --predictions or "
                         "--checkpoint with --images")
    try:
        return args.func(args)
    except Exception as exc:
        log.error("%s", exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
