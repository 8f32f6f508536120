"""Losses, augmentation, optimisers, schedules and the toy training loop."""

from .augment import AugmentConfig, TrainSample, augment, mixup
from .data import StereoDataset, SyntheticSpec, synthetic_dataset
from .loop import StageTrainConfig, ToyTrainConfig, TraceRow, TrainResult, smooth, train_toy
from .losses import CHARBONNIER_EPS, charbonnier_loss, mse_loss
from .optim import OptimConfig, OptimState, optimizer_step
from .schedule import LrSchedule, lr_at

__all__ = [
    "AugmentConfig", "TrainSample", "augment", "mixup",
    "StereoDataset", "SyntheticSpec", "synthetic_dataset",
    "StageTrainConfig", "ToyTrainConfig", "TraceRow", "TrainResult", "smooth", "train_toy",
    "CHARBONNIER_EPS", "charbonnier_loss", "mse_loss",
    "OptimConfig", "OptimState", "optimizer_step",
    "LrSchedule", "lr_at",
]
