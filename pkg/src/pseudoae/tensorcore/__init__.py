"""Dense tensors, 3D convolutions, reverse-mode differentiation and Adam."""

from .gradcheck import gradcheck, max_relative_error, numerical_grad
from .optim import Adam, AdamState, adam_step
from .conv import conv3d, conv_output_extent, conv_transpose3d
from .tensor import (
    Graph,
    GraphError,
    ShapeError,
    Tensor,
    add,
    backward,
    check_mode,
    default_dtype,
    leaky_relu,
    mse_loss,
    mul_scalar,
    parameter,
    relu,
    sigmoid,
    sub,
    sum_all,
)

__all__ = [
    "Adam", "AdamState", "adam_step", "gradcheck", "max_relative_error", "numerical_grad",
    "Graph", "GraphError", "ShapeError", "Tensor", "add", "backward", "check_mode",
    "conv3d", "conv_output_extent", "conv_transpose3d", "default_dtype", "leaky_relu",
    "mse_loss", "mul_scalar", "parameter", "relu", "sigmoid", "sub", "sum_all",
]
