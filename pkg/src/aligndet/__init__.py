"""Desk-scale deformable-attention detection transformer with a
semantic-aligner decoder, automatic bounding-box annotation, and
COCO-style evaluation."""

from .tensor import Tensor
from .model import Detector, DetectorConfig, desk_config, paper_config

__all__ = ["Tensor", "Detector", "DetectorConfig", "desk_config", "paper_config"]
__version__ = "0.1.0"
