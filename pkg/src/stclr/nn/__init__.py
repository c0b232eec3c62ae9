"""Dense-tensor numerical core: reverse-mode autodiff, layers, optimizers."""

from .tensor import (
    Tensor,
    Parameter,
    backward,
    checked_mode,
    is_checked,
    no_grad,
    zero_grad,
)
from . import ops
from .ops import (
    adaptive_avg_pool3d,
    batchnorm3d,
    conv3d,
    dense,
    relu,
    softmax_cross_entropy,
)
from .module import Module, BatchNorm3d, Conv3d, Dense, Sequential
from .optim import PlateauScheduler, adam_step, sgd_momentum_step

__all__ = [
    "Tensor",
    "Parameter",
    "backward",
    "checked_mode",
    "is_checked",
    "no_grad",
    "zero_grad",
    "ops",
    "conv3d",
    "batchnorm3d",
    "relu",
    "adaptive_avg_pool3d",
    "dense",
    "softmax_cross_entropy",
    "Module",
    "Conv3d",
    "BatchNorm3d",
    "Dense",
    "Sequential",
    "sgd_momentum_step",
    "adam_step",
    "PlateauScheduler",
]
