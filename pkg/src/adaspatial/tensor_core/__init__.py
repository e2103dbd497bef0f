"""Minimal dense-tensor engine with reverse-mode autodiff (float64)."""
from . import ops
from .gradcheck import check_gradients, numerical_grad, relative_error
from .module import Module, conv_weight, zeros
from .ops import (
    adaptive_pool_matrix,
    clamp,
    concat,
    conv2d,
    dwconv2d,
    expand,
    global_avg_pool,
    matmul,
    maxpool2x2,
    mean_all,
    mean_spatial,
    nearest_matrix,
    relu,
    sigmoid,
    softmax,
    softmax_lastdim,
    spatial_map,
    upsample_nearest,
)
from .optim import Adam
from .tensor import NonFiniteError, ShapeError, Tensor, as_tensor

__all__ = [
    "Adam",
    "Module",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "adaptive_pool_matrix",
    "as_tensor",
    "check_gradients",
    "clamp",
    "concat",
    "conv2d",
    "conv_weight",
    "dwconv2d",
    "expand",
    "global_avg_pool",
    "matmul",
    "maxpool2x2",
    "mean_all",
    "mean_spatial",
    "nearest_matrix",
    "numerical_grad",
    "ops",
    "relative_error",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_lastdim",
    "spatial_map",
    "upsample_nearest",
    "zeros",
]
