"""Dense float64 reverse-mode autodiff with stochastic gradient gates."""

from .tensor import GateDescriptor, Node, SharedDraw, Tensor, backward, zero_grads
from .ops import no_grad
from . import ops

__all__ = [
    "GateDescriptor",
    "Node",
    "SharedDraw",
    "Tensor",
    "backward",
    "no_grad",
    "zero_grads",
    "ops",
]
