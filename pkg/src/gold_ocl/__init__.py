"""
GOLD: global object-centric learning

A desk-scale laboratory for object-centric representation learning with
disentangled slot attention: synthetic sprite scenes, a patch feature codec,
a global bank of prototype representations, two-stage variational training,
and evaluation of segmentation, object identification and compositional
generation.
"""

__version__ = "0.1.0"
__author__ = "GOLD Lab Team"
__email__ = "contact@example.com"
__description__ = "Global object-centric learning with disentangled slot attention"

# Public API exports
from .exceptions import (
    GoldError,
    InvalidArgumentError,
    LoadError,
    NonFiniteLossError,
    UndefinedMetricError,
    UsageError,
)
from .config import (
    GoldConfig, SceneConfig, CodecConfig, DsaConfig, ModelConfig, TrainConfig,
    EvalConfig, LoggingConfig, get_config, set_config, load_config_from_file
)

from .model import GoldModel, build_model
from .trainer import Trainer, train, lr_schedule, temperature_schedule, total_loss
from .metrics import ari, miou, match_slots_to_objects, identity_accuracy, evaluate, Report
from .scenegen import make_prototype_library, sample_scene, render_scene, generate_dataset
from .cli import main

__all__ = [
    "__version__",
    "__author__",
    "__email__",
    "__description__",
    "GoldError",
    "InvalidArgumentError",
    "LoadError",
    "NonFiniteLossError",
    "UndefinedMetricError",
    "UsageError",
    "GoldConfig",
    "SceneConfig",
    "CodecConfig",
    "DsaConfig",
    "ModelConfig",
    "TrainConfig",
    "EvalConfig",
    "LoggingConfig",
    "get_config",
    "set_config",
    "load_config_from_file",
    "GoldModel",
    "build_model",
    "Trainer",
    "train",
    "lr_schedule",
    "temperature_schedule",
    "total_loss",
    "ari",
    "miou",
    "match_slots_to_objects",
    "identity_accuracy",
    "evaluate",
    "Report",
    "make_prototype_library",
    "sample_scene",
    "render_scene",
    "generate_dataset",
    "main",
]
