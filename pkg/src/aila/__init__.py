"""Adaptive cross-layer integration networks on a small numpy autodiff core."""

from .config import ConfigError, DataSpec, ModelConfig, RunConfig, TrainConfig
from .models import Model, build_baseline, build_model, forward, param_count

__all__ = [
    "ConfigError", "DataSpec", "ModelConfig", "RunConfig", "TrainConfig",
    "Model", "build_baseline", "build_model", "forward", "param_count",
]
__version__ = "0.1.0"
