"""Granularity-aware CNN at desk scale: staged classifiers, top-k pooling, attention cropping."""
from .config import TrainConfig, load_config
from .model import GACNN

__version__ = "0.1.0"
__all__ = ["GACNN", "TrainConfig", "load_config"]
