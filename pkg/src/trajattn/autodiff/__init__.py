from . import ops
from .checkpoint import load_weights, save_weights
from .gradcheck import check_gradients, numerical_grad, relative_error
from .nn import glorot_uniform, lstm_cell, zeros_param
from .optim import AdamState, NonFiniteGradientError, adam_step
from .tensor import ShapeError, Tape, Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "ops", "Tensor", "Tape", "ShapeError", "as_tensor", "backward", "no_grad", "grad_enabled",
    "lstm_cell", "glorot_uniform", "zeros_param", "AdamState", "adam_step",
    "NonFiniteGradientError", "save_weights", "load_weights",
    "check_gradients", "numerical_grad", "relative_error",
]
