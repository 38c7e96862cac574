"""From-scratch VGG-style convolutional classifier (the built-in backend)."""

from sleepspec.refcnn.adam import AdamState, adam_step, init_adam
from sleepspec.refcnn.arch import InvalidSpec, LayerSpec, parse_arch
from sleepspec.refcnn.model import (
    ModelParams,
    ShapeMismatch,
    backward,
    forward,
    init_xavier,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
)
from sleepspec.refcnn.train import DivergedLoss, TrainConfig, train

__all__ = [
    "AdamState",
    "DivergedLoss",
    "InvalidSpec",
    "LayerSpec",
    "ModelParams",
    "ShapeMismatch",
    "TrainConfig",
    "adam_step",
    "backward",
    "forward",
    "init_adam",
    "init_xavier",
    "load_checkpoint",
    "parse_arch",
    "predict_probs",
    "save_checkpoint",
    "train",
]
