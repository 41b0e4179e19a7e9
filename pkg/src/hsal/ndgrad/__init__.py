from .tensor import (DimensionError, DomainError, GradTape, Tensor, backward,
                     grad_enabled, no_grad)
from .ops import (add, add_bias, add_n, as_tensor, concat, conv2d, exp,
                  gather_cols, gather_column, gaussian_mask, log, log_softmax,
                  matmul, minmax_normalize, mul, narrow, pick, relu, reshape,
                  sigmoid, softmax, spatial_mean, square, sub, sum_all, tanh,
                  weighted_cols)
from .optim import Adam
from .gradcheck import gradcheck

__all__ = [
    "Adam", "DimensionError", "DomainError", "GradTape", "Tensor",
    "add", "add_bias", "add_n", "as_tensor", "backward", "concat", "conv2d",
    "exp", "gather_cols", "gather_column", "gaussian_mask", "grad_enabled",
    "gradcheck", "log", "log_softmax", "matmul", "minmax_normalize", "mul",
    "narrow", "no_grad", "pick", "relu", "reshape", "sigmoid", "softmax",
    "spatial_mean", "square", "sub", "sum_all", "tanh", "weighted_cols",
]
