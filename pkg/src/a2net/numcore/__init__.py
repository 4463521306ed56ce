"""Minimal float64 tensor autodiff used to train the detector."""

from a2net.numcore.tensor import Node, backward, constant, parameter, zero_grad
from a2net.numcore.functional import (
    add,
    concat,
    conv1d,
    exp,
    log,
    matmul,
    maxpool1d,
    mean,
    mse,
    mul,
    relu,
    reshape,
    sigmoid,
    slice_channels,
    smooth_l1,
    softmax,
    softmax_cross_entropy,
    sub,
    take,
    transpose,
)
from a2net.numcore.functional import sum as reduce_sum
from a2net.numcore.optim import Adam, AdamState, adam_step, step_lr
from a2net.numcore.gradcheck import check_gradients, max_relative_error, numerical_gradient

__all__ = [
    "Node",
    "backward",
    "constant",
    "parameter",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "relu",
    "exp",
    "log",
    "sigmoid",
    "reduce_sum",
    "mean",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "slice_channels",
    "take",
    "conv1d",
    "maxpool1d",
    "softmax",
    "softmax_cross_entropy",
    "smooth_l1",
    "mse",
    "Adam",
    "AdamState",
    "adam_step",
    "step_lr",
    "numerical_gradient",
    "max_relative_error",
    "check_gradients",
]
