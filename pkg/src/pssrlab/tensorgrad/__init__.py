"""Minimal reverse-mode autodiff over dense float64 tensors."""
from .gradcheck import GradCheckResult, grad_check
from .io import WeightsFormatError, load_weights, save_weights
from .ops import (
    ShapeError,
    add,
    avg_pool2x2,
    concat_channels,
    conv2d,
    crop2d,
    dense,
    global_avg_pool,
    leaky_relu,
    mse,
    scalar_combine,
    slice_channels,
    subtract,
)
from .optim import AdamState, adam_step
from .tensor import Tensor, as_tensor

__all__ = [
    "AdamState", "GradCheckResult", "ShapeError", "Tensor", "WeightsFormatError",
    "adam_step", "add", "as_tensor", "avg_pool2x2", "concat_channels", "conv2d",
    "crop2d", "dense", "global_avg_pool", "grad_check", "leaky_relu", "load_weights",
    "mse", "save_weights", "scalar_combine", "slice_channels", "subtract",
]
