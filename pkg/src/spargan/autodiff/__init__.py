"""Minimal reverse-mode autodiff and optimizers."""
from .optim import ParamSet, adam_step, sgd_momentum_step
from .tape import (
    BCE_EPS, ShapeError, Tape, Tensor, add, add_bias, backward, binary_cross_entropy,
    concat, leaky_relu, log, matmul, mean_batch, mul, name, sigmoid, sigmoid_bce,
    softmax, softmax_cross_entropy, sum_all, sum_rows, take_rows, tanh,
)

__all__ = [
    "BCE_EPS", "ParamSet", "ShapeError", "Tape", "Tensor", "adam_step", "add", "add_bias",
    "backward", "binary_cross_entropy", "concat", "leaky_relu", "log", "matmul",
    "mean_batch", "mul", "name", "sgd_momentum_step", "sigmoid", "sigmoid_bce", "softmax",
    "softmax_cross_entropy", "sum_all", "sum_rows", "take_rows", "tanh",
]
