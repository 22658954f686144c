"""Automatic bounding-box annotation and COCO-format dataset handling.

Covers keypoint-center expansion (nostril-style), segmentation-mask box
extraction (glottis-style), COCO JSON read/write with referential
validation, minimal PGM/PPM codecs, PTS keypoint parsing, and a seeded
synthetic dataset generator for desk-scale training.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int64)


class CocoValidationError(ValueError):
    pass


# ----------------------------------------------------------------------
# COCO container


@dataclass
class CocoDataset:
    images: list = field(default_factory=list)
    annotations: list = field(default_factory=list)
    categories: list = field(default_factory=list)

    def validate(self) -> None:
        image_ids = set()
        for i, img in enumerate(self.images):
            for key in ("id", "file_name", "width", "height"):
                if key not in img:
                    raise CocoValidationError(f"image record {i} missing '{key}'")
            if img["id"] in image_ids:
                raise CocoValidationError(f"duplicate image id {img['id']}")
            image_ids.add(img["id"])
        cat_ids = set()
        for i, cat in enumerate(self.categories):
            for key in ("id", "name"):
                if key not in cat:
                    raise CocoValidationError(f"category record {i} missing '{key}'")
            if cat["id"] in cat_ids:
                raise CocoValidationError(f"duplicate category id {cat['id']}")
            cat_ids.add(cat["id"])
        dims = {img["id"]: (img["width"], img["height"]) for img in self.images}
        ann_ids = set()
        for i, ann in enumerate(self.annotations):
            for key in ("id", "image_id", "category_id", "bbox", "area", "iscrowd"):
                if key not in ann:
                    raise CocoValidationError(f"annotation record {i} missing '{key}'")
            if ann["id"] in ann_ids:
                raise CocoValidationError(
                    f"annotation record {i}: duplicate annotation id {ann['id']}")
            ann_ids.add(ann["id"])
            if ann["image_id"] not in dims:
                raise CocoValidationError(
                    f"annotation record {i} references missing image_id "
                    f"{ann['image_id']}")
            if ann["category_id"] not in cat_ids:
                raise CocoValidationError(
                    f"annotation record {i} references missing category_id "
                    f"{ann['category_id']}")
            x, y, w, h = ann["bbox"]
            img_w, img_h = dims[ann["image_id"]]
            if w <= 0 or h <= 0:
                raise CocoValidationError(
                    f"annotation record {i} has non-positive extents {w}x{h}")
            if x < 0 or y < 0 or x + w > img_w + 1e-6 or y + h > img_h + 1e-6:
                raise CocoValidationError(
                    f"annotation record {i} bbox {ann['bbox']} exceeds image "
                    f"{img_w}x{img_h}")

    def annotations_for(self, image_id) -> list:
        return [a for a in self.annotations if a["image_id"] == image_id]


def write_coco(dataset: CocoDataset, path) -> None:
    dataset.validate()
    payload = {
        "images": dataset.images,
        "annotations": dataset.annotations,
        "categories": dataset.categories,
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def read_coco(path) -> CocoDataset:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CocoValidationError(f"malformed COCO JSON in {path}: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in payload:
            raise CocoValidationError(f"{path} missing top-level '{key}'")
    dataset = CocoDataset(images=payload["images"],
                          annotations=payload["annotations"],
                          categories=payload["categories"])
    dataset.validate()
    return dataset


# ----------------------------------------------------------------------
# box extraction


def keypoint_to_bbox(kp: tuple[float, float], box_w: float, box_h: float,
                     img_w: float, img_h: float) -> list[float] | None:
    """Expand a center keypoint into an [x, y, w, h] box clipped to the image.

    Returns None (caller should skip with a warning) when the keypoint lies
    outside the image.
    """
    if box_w <= 0 or box_h <= 0:
        raise ValueError(f"box extents must be positive, got {box_w}x{box_h}")
    x, y = kp
    if not (0 <= x <= img_w and 0 <= y <= img_h):
        return None
    x1 = max(x - box_w / 2, 0.0)
    y1 = max(y - box_h / 2, 0.0)
    x2 = min(x + box_w / 2, float(img_w))
    y2 = min(y + box_h / 2, float(img_h))
    return [x1, y1, x2 - x1, y2 - y1]


def mask_to_bboxes(mask: np.ndarray, mode: str = "global") -> list[list[float]]:
    """Boxes from a binary mask with inclusive pixel spans (w = xmax - xmin + 1).

    'global' gives one box over all foreground; 'component' gives one box per
    8-connected component. Empty masks give an empty list.
    """
    fg = np.asarray(mask) > 0
    if not fg.any():
        return []
    if mode == "global":
        ys, xs = np.nonzero(fg)
        return [[float(xs.min()), float(ys.min()),
                 float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1)]]
    if mode == "component":
        labeled, count = ndimage.label(fg, structure=EIGHT_CONNECTED)
        boxes = []
        for slc_y, slc_x in ndimage.find_objects(labeled):
            boxes.append([float(slc_x.start), float(slc_y.start),
                          float(slc_x.stop - slc_x.start),
                          float(slc_y.stop - slc_y.start)])
        return boxes
    raise ValueError(f"unknown mask-to-bbox mode {mode!r}")


# ----------------------------------------------------------------------
# minimal binary PNM codecs


def _read_pnm_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def read_pgm(path) -> np.ndarray:
    """Binary 8-bit P5 grayscale, returned as (H, W) uint8."""
    data = Path(path).read_bytes()
    width, height, maxval, offset = _read_pnm_header(data, b"P5")
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height,
                           offset=offset)
    return pixels.reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_ppm(path) -> np.ndarray:
    """Binary 8-bit P6 color, returned as (H, W, 3) uint8."""
    data = Path(path).read_bytes()
    width, height, maxval, offset = _read_pnm_header(data, b"P6")
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PPM not supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3,
                           offset=offset)
    return pixels.reshape(height, width, 3).copy()


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


# ----------------------------------------------------------------------
# PTS keypoint files


def read_pts(path) -> list[tuple[float, float]]:
    """PTS-style keypoints: header lines, then 'x y' pairs between { and }."""
    points = []
    in_body = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        token = line.strip()
        if not token:
            continue
        if token == "{":
            in_body = True
            continue
        if token == "}":
            break
        if not in_body:
            continue
        parts = token.split()
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected 'x y', got {token!r}")
        points.append((float(parts[0]), float(parts[1])))
    return points


# ----------------------------------------------------------------------
# directory-level annotation pipelines


def annotate_keypoints(keypoint_dir, image_dir, box_w: float, box_h: float,
                       point_indices: list[int] | None = None,
                       category_name: str = "nostril") -> CocoDataset:
    """Build a COCO dataset by expanding keypoints from *.pts files.

    Image dimensions come from the like-named .pgm file in ``image_dir``;
    files without a matching image, or keypoints outside it, are skipped
    with a warning.
    """
    keypoint_dir = Path(keypoint_dir)
    if not keypoint_dir.is_dir():
        raise FileNotFoundError(f"keypoint directory {keypoint_dir} not found")
    dataset = CocoDataset(categories=[{"id": 1, "name": category_name}])
    ann_id = 1
    for image_id, pts_path in enumerate(sorted(keypoint_dir.glob("*.pts")), 1):
        pgm_path = Path(image_dir) / (pts_path.stem + ".pgm")
        if not pgm_path.exists():
            log.warning("no image for %s, skipping", pts_path.name)
            continue
        image = read_pgm(pgm_path)
        img_h, img_w = image.shape
        points = read_pts(pts_path)
        if point_indices is not None:
            points = [points[i] for i in point_indices if i < len(points)]
        dataset.images.append({"id": image_id, "file_name": pgm_path.name,
                               "width": img_w, "height": img_h})
        for kp in points:
            bbox = keypoint_to_bbox(kp, box_w, box_h, img_w, img_h)
            if bbox is None:
                log.warning("keypoint %s outside image %s, skipping", kp,
                            pgm_path.name)
                continue
            dataset.annotations.append({
                "id": ann_id, "image_id": image_id, "category_id": 1,
                "bbox": bbox, "area": bbox[2] * bbox[3], "iscrowd": 0,
            })
            ann_id += 1
    dataset.validate()
    return dataset


def annotate_masks(mask_dir, mode: str = "global",
                   category_name: str = "glottis") -> CocoDataset:
    """Build a COCO dataset from P5 PGM segmentation masks (threshold > 0)."""
    dataset = CocoDataset(categories=[{"id": 1, "name": category_name}])
    ann_id = 1
    image_id = 0
    for path in sorted(Path(mask_dir).iterdir()):
        if path.suffix.lower() != ".pgm":
            if path.is_file():
                log.warning("skipping non-PGM file %s", path.name)
            continue
        try:
            mask = read_pgm(path)
        except ValueError as exc:
            log.warning("skipping unreadable %s: %s", path.name, exc)
            continue
        image_id += 1
        img_h, img_w = mask.shape
        dataset.images.append({"id": image_id, "file_name": path.name,
                               "width": img_w, "height": img_h})
        for bbox in mask_to_bboxes(mask, mode=mode):
            dataset.annotations.append({
                "id": ann_id, "image_id": image_id, "category_id": 1,
                "bbox": bbox, "area": bbox[2] * bbox[3], "iscrowd": 0,
            })
            ann_id += 1
    dataset.validate()
    return dataset


# ----------------------------------------------------------------------
# synthetic dataset generator

SHAPE_CLASSES = ("rectangle", "ellipse")


def _render_shape(rng: np.random.Generator, img: np.ndarray, shape_kind: str,
                  occupied: list[list[float]]) -> list[float] | None:
    """Draw one bright shape avoiding existing boxes; returns its tight bbox."""
    h, w, _ = img.shape
    lo_w, lo_h = max(10, w // 4), max(10, h // 4)
    hi_w, hi_h = max(lo_w + 1, w // 2), max(lo_h + 1, h // 2)
    for _ in range(40):
        bw = int(rng.integers(lo_w, hi_w))
        bh = int(rng.integers(lo_h, hi_h))
        x0 = int(rng.integers(0, w - bw))
        y0 = int(rng.integers(0, h - bh))
        candidate = [x0 - 1, y0 - 1, bw + 2, bh + 2]
        if any(_boxes_overlap(candidate, box) for box in occupied):
            continue
        color = rng.uniform(0.7, 1.0, size=3)
        mask = np.zeros((h, w), dtype=bool)
        if shape_kind == "rectangle":
            mask[y0:y0 + bh, x0:x0 + bw] = True
        else:
            cy, cx = y0 + (bh - 1) / 2, x0 + (bw - 1) / 2
            ry, rx = bh / 2, bw / 2
            ys, xs = np.mgrid[0:h, 0:w]
            mask = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
        if not mask.any():
            continue
        img[mask] = color
        ys, xs = np.nonzero(mask)
        tight = [float(xs.min()), float(ys.min()),
                 float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1)]
        occupied.append(tight)
        return tight
    return None


def _boxes_overlap(a: list[float], b: list[float]) -> bool:
    return not (a[0] + a[2] <= b[0] or b[0] + b[2] <= a[0]
                or a[1] + a[3] <= b[1] or b[1] + b[3] <= a[1])


def generate_synthetic(seed: int, count: int, image_size: tuple[int, int],
                       classes: tuple[str, ...] = SHAPE_CLASSES,
                       out_dir=None) -> tuple[list[np.ndarray], CocoDataset]:
    """Seed-deterministic noise images with 1-3 bright non-occluding shapes.

    Class identity is the shape type. Ground-truth boxes tightly bound the
    rendered pixels (inclusive spans). When ``out_dir`` is given, images are
    written there as P6 PPM files named image_<id>.ppm.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    h, w = image_size
    rng = np.random.default_rng(seed)
    dataset = CocoDataset(categories=[
        {"id": i + 1, "name": name} for i, name in enumerate(classes)
    ])
    images = []
    ann_id = 1
    for image_id in range(1, count + 1):
        img = rng.uniform(0.0, 0.35, size=(h, w, 3))
        occupied: list[list[float]] = []
        num_shapes = int(rng.integers(1, 4))
        file_name = f"image_{image_id:05d}.ppm"
        dataset.images.append({"id": image_id, "file_name": file_name,
                               "width": w, "height": h})
        for _ in range(num_shapes):
            kind_idx = int(rng.integers(0, len(classes)))
            bbox = _render_shape(rng, img, classes[kind_idx], occupied)
            if bbox is None:
                continue
            dataset.annotations.append({
                "id": ann_id, "image_id": image_id,
                "category_id": kind_idx + 1, "bbox": bbox,
                "area": bbox[2] * bbox[3], "iscrowd": 0,
            })
            ann_id += 1
        quantized = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
        images.append(quantized)
        if out_dir is not None:
            write_ppm(Path(out_dir) / file_name, quantized)
    dataset.validate()
    return images, dataset
