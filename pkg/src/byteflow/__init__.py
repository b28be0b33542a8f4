"""Coding-rate byte segmentation and a hierarchical byte-level language model."""

from .model import ModelConfig
from .rate import BoundarySet, RateConfig, RateProfile
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BoundarySet",
    "ModelConfig",
    "RateConfig",
    "RateProfile",
    "TrainConfig",
    "__version__",
]
