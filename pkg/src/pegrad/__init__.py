"""Per-example gradients for differentially private SGD."""

from .config import Settings, load_settings
from .dpsgd import DpConfig, Trainer, dpsgd_step
from .models import Model, build
from .strategies import PerExampleGrads, Strategy, get_strategy

__all__ = [
    "DpConfig",
    "Model",
    "PerExampleGrads",
    "Settings",
    "Strategy",
    "Trainer",
    "build",
    "dpsgd_step",
    "get_strategy",
    "load_settings",
]
