"""Seeded training loop over a COCO dataset of PPM images."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotations import CocoDataset, read_coco, read_ppm
from .matching import LossWeights, set_loss
from .model import Detector, DetectorConfig, save_checkpoint
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Full description of one training run; defaults follow the reference
    setup where it states values (optimizer learning rates, 24 epochs)."""

    detector: DetectorConfig = field(default_factory=DetectorConfig)
    lr_backbone: float = 1e-5
    lr_detector: float = 1e-4
    epochs: int = 24
    batch_size: int = 4
    seed: int = 0
    clip_norm: float = 0.1
    aux_loss: bool = True
    augment: bool = True       # seeded random horizontal/vertical flips
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        data = dict(data)
        if "detector" in data:
            data["detector"] = DetectorConfig(**data["detector"])
        if "loss_weights" in data:
            data["loss_weights"] = LossWeights(**data["loss_weights"])
        return RunConfig(**data)


@dataclass
class Sample:
    image_id: int
    image: np.ndarray          # (3, H, W) float64 in [0, 1]
    labels: np.ndarray         # 0-based class indices
    boxes: np.ndarray          # normalized cxcywh


def load_samples(dataset: CocoDataset, image_dir) -> list[Sample]:
    """Read PPM images and convert COCO xywh boxes to normalized cxcywh."""
    cat_index = {c["id"]: i for i, c in
                 enumerate(sorted(dataset.categories, key=lambda c: c["id"]))}
    samples = []
    for img in dataset.images:
        pixels = read_ppm(Path(image_dir) / img["file_name"])
        image = pixels.astype(np.float64).transpose(2, 0, 1) / 255.0
        anns = dataset.annotations_for(img["id"])
        labels = np.array([cat_index[a["category_id"]] for a in anns],
                          dtype=np.int64)
        boxes = np.zeros((len(anns), 4))
        for i, ann in enumerate(anns):
            x, y, w, h = ann["bbox"]
            boxes[i] = [(x + w / 2) / img["width"], (y + h / 2) / img["height"],
                        w / img["width"], h / img["height"]]
        samples.append(Sample(img["id"], image, labels, boxes))
    return samples


def flip_sample(sample: Sample, flip_x: bool, flip_y: bool) -> Sample:
    """Mirror an image and its normalized cxcywh boxes along either axis."""
    if not (flip_x or flip_y):
        return sample
    image = sample.image
    boxes = sample.boxes.copy()
    if flip_x:
        image = image[:, :, ::-1]
        boxes[:, 0] = 1.0 - boxes[:, 0]
    if flip_y:
        image = image[:, ::-1, :]
        boxes[:, 1] = 1.0 - boxes[:, 1]
    return Sample(sample.image_id, np.ascontiguousarray(image),
                  sample.labels, boxes)


def split_param_groups(detector: Detector) -> tuple[list, list]:
    backbone, rest = [], []
    for name, p in detector.named_parameters():
        (backbone if name.startswith("backbone.") else rest).append(p)
    return backbone, rest


def make_optimizer(detector: Detector, run: RunConfig) -> Adam:
    backbone, rest = split_param_groups(detector)
    return Adam({"backbone": (backbone, run.lr_backbone),
                 "detector": (rest, run.lr_detector)},
                clip_norm=run.clip_norm)


def train_step(detector: Detector, optimizer: Adam, batch: list[Sample],
               run: RunConfig) -> dict:
    """One optimizer step on a batch: per-image losses averaged, one backward."""
    optimizer.zero_grad()
    total = None
    diag = {"cls": 0.0, "l1": 0.0, "giou": 0.0, "matched": 0}
    for sample in batch:
        out = detector(sample.image)
        try:
            loss, parts = set_loss(out["layers"], sample.labels, sample.boxes,
                                   run.loss_weights, aux=run.aux_loss)
        except ValueError as exc:
            # a non-finite match cost means the forward pass blew up
            raise TrainingDiverged(
                f"loss failed on image id {sample.image_id}: {exc}"
            ) from exc
        total = loss if total is None else total + loss
        for key in ("cls", "l1", "giou"):
            diag[key] += parts[key]
        diag["matched"] += parts["matched"]
    total = total * (1.0 / len(batch))
    value = total.item()
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss {value} on batch with image ids "
            f"{[s.image_id for s in batch]}"
        )
    total.backward()
    grad_norm = optimizer.step()
    diag.update(loss=value, grad_norm=grad_norm)
    return diag


def train(run: RunConfig, dataset: CocoDataset, image_dir, out_dir,
          metrics_name: str = "metrics.jsonl") -> Path:
    """Train per the run config; write JSONL metrics plus final/best checkpoints.

    Returns the path of the final checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_samples(dataset, image_dir)
    detector = Detector(run.detector, seed=run.seed)
    optimizer = make_optimizer(detector, run)
    rng = np.random.default_rng(run.seed)

    metrics_path = out_dir / metrics_name
    best_loss = float("inf")
    step = 0
    start = time.time()
    with metrics_path.open("w") as metrics:
        for epoch in range(run.epochs):
            order = rng.permutation(len(samples))
            epoch_loss = 0.0
            batches = 0
            for lo in range(0, len(order), run.batch_size):
                batch = [samples[i] for i in order[lo:lo + run.batch_size]]
                if run.augment:
                    batch = [flip_sample(s, rng.random() < 0.5,
                                         rng.random() < 0.5) for s in batch]
                diag = train_step(detector, optimizer, batch, run)
                step += 1
                epoch_loss += diag["loss"]
                batches += 1
                metrics.write(json.dumps({
                    "epoch": epoch, "step": step, "loss": diag["loss"],
                    "cls": diag["cls"], "l1": diag["l1"], "giou": diag["giou"],
                    "grad_norm": diag["grad_norm"],
                    "lr_backbone": run.lr_backbone,
                    "lr_detector": run.lr_detector,
                }) + "\n")
            if batches:
                epoch_loss /= batches
                log.info("epoch %d: loss %.4f (%.1fs)", epoch, epoch_loss,
                         time.time() - start)
                if epoch_loss < best_loss:
                    best_loss = epoch_loss
                    save_checkpoint(out_dir / "best.npz", detector,
                                    {"epoch": epoch, "loss": epoch_loss})
    final_path = out_dir / "final.npz"
    save_checkpoint(final_path, detector, {"epochs": run.epochs})
    if run.epochs == 0:
        metrics_path.write_text("")
    return final_path


def read_loss_trace(metrics_path) -> list[float]:
    trace = []
    for line in Path(metrics_path).read_text().splitlines():
        if line.strip():
            trace.append(json.loads(line)["loss"])
    return trace
