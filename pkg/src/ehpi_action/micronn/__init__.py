"""Small numpy neural-network stack for the EHPI classifier."""
from .checkpoint import load_checkpoint, save_checkpoint
from .net import EhpiNet, NetConfig, parameter_count
from .ops import softmax, softmax_cross_entropy, xavier_init
from .optim import balanced_sampler, lr_at_epoch, sgd_step
from .train import (
    EhpiDataset,
    EpochRecord,
    TrainConfig,
    TrainResult,
    accuracy,
    predict_smoothed,
    train,
)

__all__ = [
    "EhpiDataset",
    "EhpiNet",
    "EpochRecord",
    "NetConfig",
    "TrainConfig",
    "TrainResult",
    "accuracy",
    "balanced_sampler",
    "load_checkpoint",
    "lr_at_epoch",
    "parameter_count",
    "predict_smoothed",
    "save_checkpoint",
    "sgd_step",
    "softmax",
    "softmax_cross_entropy",
    "train",
    "xavier_init",
]
