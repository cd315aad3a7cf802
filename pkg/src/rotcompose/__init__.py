"""Image-text query composition via complex rotations.

Core pieces: a minimal reverse-mode autodiff engine (``autodiff``), the
composition networks (``model``), training losses (``losses``), feature
datasets and the planted synthetic generator (``data``), the training
loop (``training``), and recall@k evaluation (``evaluation``). A FastAPI
service (``rotcompose.service``) and a thin CLI client (``rotcompose.cli``)
expose the synth/train/eval/gradcheck/selftest workflows.
"""

from .errors import (ConfigError, ContractViolation, FormatError,
                     NumericError, RotcomposeError, UsageError)
from .model import ModelConfig, VARIANTS
from .losses import LossWeights
from .data import FeatureDataset, SynthConfig
from .training import TrainConfig, Checkpoint

__all__ = [
    "ConfigError", "ContractViolation", "FormatError", "NumericError",
    "RotcomposeError", "UsageError", "ModelConfig", "VARIANTS",
    "LossWeights", "FeatureDataset", "SynthConfig", "TrainConfig",
    "Checkpoint",
]

__version__ = "0.1.0"
