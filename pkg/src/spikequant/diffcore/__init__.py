"""Minimal reverse-mode autodiff over dense float64 tensors."""

from .engine import Tensor, Tape, Gradients, tensor, zeros, active_tape
from .checks import grad_check
from .optim import AdamW
from .ops import (
    add, add_trailing, channel_affine, conv2d, custom_grad, matmul, mean,
    mul, powc, reduce_sum, reshape, scale, select, softmax_cross_entropy,
    softmax_lastdim, stack, sub, transpose,
)

__all__ = [
    "Tensor", "Tape", "Gradients", "tensor", "zeros", "active_tape",
    "grad_check", "AdamW",
    "add", "add_trailing", "channel_affine", "conv2d", "custom_grad",
    "matmul", "mean", "mul", "powc", "reduce_sum", "reshape", "scale",
    "select", "softmax_cross_entropy", "softmax_lastdim", "stack", "sub",
    "transpose",
]
