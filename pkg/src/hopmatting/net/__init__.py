from .config import ConfigError, DataConfig, ExperimentConfig, NetworkConfig, TrainSchedule, load_config, parse_config
from .model import (
    EmptyUnknownRegionError,
    MattingModel,
    build,
    forward,
    forward_batch,
    load_model,
    loss,
    predict,
    receptive_field,
    save_model,
)
from .train import TrainingError, lr_at, train

__all__ = [
    "ConfigError",
    "DataConfig",
    "EmptyUnknownRegionError",
    "ExperimentConfig",
    "MattingModel",
    "NetworkConfig",
    "TrainSchedule",
    "TrainingError",
    "build",
    "forward",
    "forward_batch",
    "load_config",
    "load_model",
    "loss",
    "lr_at",
    "parse_config",
    "predict",
    "receptive_field",
    "save_model",
    "train",
]
