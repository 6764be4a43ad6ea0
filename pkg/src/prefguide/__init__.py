"""Preference-guided RL laboratory: sparse-reward environments, a minimal
numpy MLP stack, trajectory-MMD preference guidance, scripted-oracle and
human-in-the-loop annotation, and the two-step training loop tying them
together."""

from .config import (ConfigError, TrainConfig, grid_config, line_config,
                     load_config)
from .training import IterationMetrics, RunResult, TrainHooks, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "TrainConfig",
    "grid_config",
    "line_config",
    "load_config",
    "IterationMetrics",
    "RunResult",
    "TrainHooks",
    "evaluate",
    "train",
    "__version__",
]
