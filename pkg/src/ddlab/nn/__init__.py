from .layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    ReLU,
    ResidualBlock,
    uniform_fan_in,
)
from .loss import cross_entropy, softmax
from .model import Model
from .optim import lr_at, sgd_momentum_step, sgd_step
from .train import DivergenceError, TrainConfig, TrainHistory, evaluate, train, write_history_csv

__all__ = [
    "BatchNorm2d", "Conv2d", "Dense", "Flatten", "GlobalAvgPool", "Layer",
    "MaxPool2d", "ReLU", "ResidualBlock", "uniform_fan_in",
    "cross_entropy", "softmax", "Model", "lr_at", "sgd_momentum_step",
    "sgd_step", "DivergenceError", "TrainConfig", "TrainHistory", "evaluate",
    "train", "write_history_csv",
]
