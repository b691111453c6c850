"""Local and global graph learning for multimodal top-n recommendation."""

from .config import PRESETS, RngStreams, TrainConfig, preset_config
from .data import AdjacencyPair, Dataset, load_dataset
from .estimator import LGMRec
from .model import ModelParams, forward
from .synthetic import SynthConfig, generate_synthetic, generate_synthetic_with_labels
from .trainer import TrainHistory, fit

__version__ = "0.1.0"

__all__ = [
    "AdjacencyPair",
    "Dataset",
    "LGMRec",
    "ModelParams",
    "PRESETS",
    "RngStreams",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "__version__",
    "fit",
    "forward",
    "generate_synthetic",
    "generate_synthetic_with_labels",
    "load_dataset",
    "preset_config",
]
