"""Minimal reverse-mode automatic differentiation."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, max_relative_error, numerical_grad
from .optim import SGD, sgd_step
from .tensor import Tensor, backward

__all__ = [
    "SGD", "Tensor", "backward", "check_gradients", "load_checkpoint", "max_relative_error",
    "numerical_grad", "ops", "save_checkpoint", "sgd_step",
]
