"""Float64 tensors with tape-based reverse-mode differentiation."""

from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .core import (
    ContractError,
    GradTape,
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    check_finite,
    record_op,
)
from .gradcheck import GradientCheckError, gradient_check, numerical_gradient
from .nn import Conv2d, Linear, Module
from .optim import SGD, Adam, AdamState, adam_step
from .rng import generator, sub_seed

__all__ = [
    "Adam", "AdamState", "CheckpointError", "ContractError", "Conv2d", "GradTape", "GradientCheckError",
    "Linear", "Module", "NonFiniteError", "Parameter", "SGD", "ShapeError", "Tensor", "adam_step",
    "as_tensor", "backward", "check_finite", "generator", "gradient_check", "load_checkpoint",
    "numerical_gradient", "ops", "record_op", "save_checkpoint", "sub_seed",
]
