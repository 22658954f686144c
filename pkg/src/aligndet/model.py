"""Full detector: CNN backbone, deformable encoder, aligner decoder, heads.

Layers are pre-norm: each sublayer reads a layer-normed copy of its input
and adds its output back to the residual stream, so a zero-initialized
sublayer is an exact identity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .aligner import SemanticAligner
from .attention import FeaturePyramid, MSDeformAttention
from .nn import (Conv2d, LayerNorm, Linear, MLP, Module, MultiHeadSelfAttention,
                 param, sinusoidal_embedding)
from .tensor import ShapeError, Tensor, softmax

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class DetectorConfig:
    dim: int = 32                      # channel width d of queries and features
    num_queries: int = 10              # N
    heads: int = 4                     # M; also the salient points per box
    levels: int = 4                    # L pyramid levels
    enc_layers: int = 2
    dec_layers: int = 2
    num_classes: int = 2               # real classes; heads add a no-object slot
    image_size: tuple[int, int] = (64, 64)   # (H, W)
    backbone_channels: tuple[int, ...] = (24, 32, 48, 64, 80, 96)
    points: int = 4                    # K sampling points per level per head
    roi_grid: int = 7                  # G
    ffn_dim: int = 128
    aligner_hidden: int = 128
    aux_loss: bool = True

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.backbone_channels = tuple(self.backbone_channels)
        if len(self.backbone_channels) != self.levels + 2:
            raise ShapeError(
                f"backbone needs {self.levels + 2} channel entries "
                f"(strides 2 and 4, then one per level), got "
                f"{len(self.backbone_channels)}"
            )

    @property
    def deepest_stride(self) -> int:
        return 4 * 2 ** self.levels

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @staticmethod
    def from_json(text: str) -> "DetectorConfig":
        return DetectorConfig(**json.loads(text))


def desk_config(**overrides) -> DetectorConfig:
    return DetectorConfig(**overrides)


def paper_config(**overrides) -> DetectorConfig:
    base = dict(dim=256, num_queries=300, heads=8, levels=4, enc_layers=6,
                dec_layers=6, ffn_dim=1024, aligner_hidden=256,
                image_size=(256, 256),
                backbone_channels=(64, 128, 256, 384, 512, 640))
    base.update(overrides)
    return DetectorConfig(**base)


class Backbone(Module):
    """Strided 3x3 conv chain producing L levels at strides 8..8*2^(L-1)."""

    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        chans = (3,) + cfg.backbone_channels
        self.convs = []
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
            conv = Conv2d(cin, cout, kernel=3, stride=2, rng=rng)
            self.register(f"conv{i}", conv)
            self.convs.append(conv)
        self.projs = []
        for l in range(cfg.levels):
            proj = Linear(cfg.backbone_channels[l + 2], cfg.dim, rng)
            self.register(f"proj{l}", proj)
            self.projs.append(proj)

    def __call__(self, image: Tensor) -> FeaturePyramid:
        cfg = self.cfg
        _, h, w = image.shape
        stride = cfg.deepest_stride
        if h % stride or w % stride:
            raise ShapeError(
                f"image {h}x{w} not divisible by deepest stride {stride}"
            )
        x = image
        feats = []
        for conv in self.convs:
            x = conv(x).relu()
            feats.append(x)
        levels = []
        for l in range(cfg.levels):
            feat = feats[l + 2]                       # stride 8 * 2^l
            c, fh, fw = feat.shape
            hw_first = feat.reshape(c, fh * fw).transpose(1, 0)
            levels.append(self.projs[l](hw_first).reshape(fh, fw, cfg.dim))
        return FeaturePyramid(levels)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.register("up", Linear(dim, hidden, rng))
        self.register("down", Linear(hidden, dim, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(self.up(x).relu())


class EncoderLayer(Module):
    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.dim
        self.register("attn", MSDeformAttention(d, d, d, d, cfg.heads,
                                                cfg.levels, cfg.points, rng))
        self.register("norm1", LayerNorm(d))
        self.register("norm2", LayerNorm(d))
        self.register("ffn", FeedForward(d, cfg.ffn_dim, rng))

    def __call__(self, tokens: Tensor, pos: Tensor, ref_grid: np.ndarray,
                 shapes: list[tuple[int, int]]) -> Tensor:
        normed = self.norm1(tokens)
        pyramid = FeaturePyramid.unflatten(normed, shapes)
        tokens = tokens + self.attn(normed + pos, ref_grid, pyramid)
        tokens = tokens + self.ffn(self.norm2(tokens))
        return tokens


class DecoderLayer(Module):
    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator):
        super().__init__()
        d, m = cfg.dim, cfg.heads
        self.register("sam", SemanticAligner(d, m, cfg.roi_grid,
                                             cfg.aligner_hidden, rng))
        self.register("cross", MSDeformAttention(m * d, d, m * d, d, m,
                                                 cfg.levels, cfg.points, rng))
        self.register("self_attn", MultiHeadSelfAttention(d, m, rng))
        self.register("norm1", LayerNorm(d))
        self.register("norm2", LayerNorm(d))
        self.register("norm3", LayerNorm(d))
        self.register("ffn", FeedForward(d, cfg.ffn_dim, rng))

    def __call__(self, content: Tensor, query_pos: Tensor,
                 encoded: FeaturePyramid, sam_level: int):
        sam_out = self.sam(self.norm1(content), query_pos,
                           encoded.levels[sam_level])
        cross_in = sam_out["content"] + sam_out["pos"]
        content = content + self.cross(cross_in, sam_out["ref_points"], encoded)
        content = content + self.self_attn(self.norm2(content), pos=query_pos)
        content = content + self.ffn(self.norm3(content))
        return content, sam_out


class PredictionHeads(Module):
    """Shared classification (softmax over C+1) and box (sigmoid cxcywh) heads."""

    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.dim
        self.register("class_head", Linear(d, cfg.num_classes + 1, rng))
        self.register("box_head", MLP([d, d, d, 4], rng))

    def __call__(self, content: Tensor) -> dict:
        logits = self.class_head(content)
        boxes = self.box_head(content).sigmoid()
        return {"logits": logits, "boxes": boxes,
                "scores": softmax(logits, axis=-1)}


class Detector(Module):
    """End-to-end detection transformer with the aligner decoder."""

    def __init__(self, cfg: DetectorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.register("backbone", Backbone(cfg, rng))
        self.register("level_embed",
                      param(rng.normal(0.0, 0.02, size=(cfg.levels, cfg.dim))))
        self.enc_layers = []
        for i in range(cfg.enc_layers):
            layer = EncoderLayer(cfg, rng)
            self.register(f"enc{i}", layer)
            self.enc_layers.append(layer)
        self.register("query_content",
                      param(rng.normal(0.0, 0.02, size=(cfg.num_queries, cfg.dim))))
        self.register("query_pos",
                      param(rng.normal(0.0, 0.02, size=(cfg.num_queries, cfg.dim))))
        self.dec_layers = []
        for i in range(cfg.dec_layers):
            layer = DecoderLayer(cfg, rng)
            self.register(f"dec{i}", layer)
            self.dec_layers.append(layer)
        self.register("final_norm", LayerNorm(cfg.dim))
        self.register("heads", PredictionHeads(cfg, rng))

    # ------------------------------------------------------------------

    def sam_level_for_layer(self, layer_index: int) -> int:
        """Round-robin level routing: layer i reads pyramid level i mod L."""
        return layer_index % self.cfg.levels

    def encode(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        shapes = pyramid.shapes
        tokens = pyramid.flatten()
        ref_grid = pyramid.reference_grid()
        pe = sinusoidal_embedding(ref_grid, self.cfg.dim)
        level_rows = np.concatenate([
            np.full(h * w, l, dtype=np.int64) for l, (h, w) in enumerate(shapes)
        ])
        pos = pe + self.level_embed[level_rows, :]
        for layer in self.enc_layers:
            tokens = layer(tokens, pos, ref_grid, shapes)
        return FeaturePyramid.unflatten(tokens, shapes)

    def decode(self, encoded: FeaturePyramid) -> list[dict]:
        content = self.query_content
        states = []
        for i, layer in enumerate(self.dec_layers):
            content, sam_out = layer(content, self.query_pos, encoded,
                                     self.sam_level_for_layer(i))
            states.append({"content": content,
                           "ref_boxes": sam_out["ref_boxes"],
                           "ref_points": sam_out["ref_points"]})
        return states

    def forward(self, image) -> dict:
        image_t = image if isinstance(image, Tensor) else Tensor(image)
        pyramid = self.backbone(image_t)
        encoded = self.encode(pyramid)
        states = self.decode(encoded)
        layers = []
        for state in states:
            pred = self.heads(self.final_norm(state["content"]))
            pred.update(ref_boxes=state["ref_boxes"],
                        ref_points=state["ref_points"])
            layers.append(pred)
        return {"pyramid": pyramid, "encoded": encoded, "layers": layers}

    __call__ = forward

    def detect(self, image) -> dict:
        """Numpy detections from the final layer, boxes in pixel xywh."""
        out = self.forward(image)["layers"][-1]
        scores = out["scores"].data
        boxes = out["boxes"].data
        h, w = self.cfg.image_size
        real = scores[:, :self.cfg.num_classes]
        labels = real.argmax(axis=1)
        conf = real[np.arange(len(labels)), labels]
        x1 = (boxes[:, 0] - boxes[:, 2] / 2) * w
        y1 = (boxes[:, 1] - boxes[:, 3] / 2) * h
        return {
            "boxes_xywh": np.stack([x1, y1, boxes[:, 2] * w, boxes[:, 3] * h],
                                   axis=1),
            "labels": labels,
            "scores": conf,
        }


# ----------------------------------------------------------------------
# checkpoint container: npz with a versioned JSON header


def save_checkpoint(path, detector: Detector, extra: dict | None = None) -> None:
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(detector.cfg),
        "extra": extra or {},
    }
    arrays = {"param/" + name: p.data for name, p in detector.named_parameters()}
    np.savez_compressed(path, __header__=np.frombuffer(
        json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[Detector, dict]:
    with np.load(path) as archive:
        header = json.loads(bytes(archive["__header__"]).decode())
        if header["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format {header['format_version']}"
            )
        cfg_dict = header["config"]
        cfg_dict["image_size"] = tuple(cfg_dict["image_size"])
        cfg_dict["backbone_channels"] = tuple(cfg_dict["backbone_channels"])
        cfg = DetectorConfig(**cfg_dict)
        detector = Detector(cfg)
        params = dict(detector.named_parameters())
        for key in archive.files:
            if not key.startswith("param/"):
                continue
            name = key[len("param/"):]
            if name not in params:
                raise ValueError(f"checkpoint has unknown parameter '{name}'")
            if params[name].data.shape != archive[key].shape:
                raise ValueError(
                    f"checkpoint shape mismatch for '{name}': "
                    f"{archive[key].shape} vs {params[name].data.shape}"
                )
            params[name].data = archive[key].astype(np.float64)
        return detector, header["extra"]
