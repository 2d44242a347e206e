from .gradcheck import grad_check
from .optim import Adam, AdamState, Parameter, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    conv2d,
    exp,
    leaky_relu,
    log,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    transpose,
    tsum,
    xlogy,
)

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "mul",
    "matmul",
    "conv2d",
    "softmax",
    "relu",
    "leaky_relu",
    "log",
    "exp",
    "xlogy",
    "tsum",
    "reshape",
    "transpose",
    "Parameter",
    "Adam",
    "AdamState",
    "adam_step",
    "grad_check",
]
