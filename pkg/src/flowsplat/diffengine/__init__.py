"""Differentiation engine: reverse-mode graphs with forward-mode input tangents."""

from .dual import DualVector, concat, constant
from .engine import backprop, forward_jacobian, nested_grad
from .params import ParameterSet
from .tensor import NumericFailure, StructuralError, Tensor, grad, no_grad, parameter

__all__ = [
    "DualVector", "NumericFailure", "ParameterSet", "StructuralError", "Tensor",
    "backprop", "concat", "constant", "forward_jacobian", "grad", "nested_grad",
    "no_grad", "parameter",
]
