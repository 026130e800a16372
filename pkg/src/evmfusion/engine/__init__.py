"""Minimal dense-tensor library with reverse-mode differentiation."""
from . import ops
from . import checkpoint
from .checkpoint import CheckpointError
from .context import Context, get_context, no_grad, set_context, using
from .gradcheck import grad_check
from .nn import Conv2d, GRUCell, LayerNorm, Linear, Module, Parameter, gru_cell
from .ops import (activation, conv2d, layer_norm, log_softmax, matmul, relu, sigmoid, silu,
                  softmax, softplus, tanh)
from .rng import SplitMix64
from .tensor import Tensor, as_tensor, make_op

__all__ = [
    "CheckpointError", "Context", "Conv2d", "GRUCell", "LayerNorm", "Linear", "Module", "Parameter",
    "SplitMix64", "Tensor", "activation", "as_tensor", "conv2d", "get_context", "grad_check",
    "gru_cell", "layer_norm", "log_softmax", "make_op", "matmul", "no_grad", "ops", "relu",
    "set_context", "sigmoid", "silu", "softmax", "softplus", "tanh", "using",
]
