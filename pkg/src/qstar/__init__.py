"""Desk-scale question-guided audio-visual QA on a small numpy autodiff engine."""

from .config import ConfigError, RunConfig, load_config, parse_config_text
from .harness import NumericalError, RunReport, evaluate, run_ablation_suite, train
from .model import QStar, build_model
from .tensor import Tensor, backward

__all__ = [
    "ConfigError",
    "NumericalError",
    "QStar",
    "RunConfig",
    "RunReport",
    "Tensor",
    "backward",
    "build_model",
    "evaluate",
    "load_config",
    "parse_config_text",
    "run_ablation_suite",
    "train",
]
__version__ = "0.1.0"
