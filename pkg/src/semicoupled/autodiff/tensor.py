"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is recorded eagerly: every operation in
:mod:`semicoupled.autodiff.ops` produces a :class:`Tensor` whose ``node``
links back to its inputs together with a closure that maps the output
gradient to input gradients.  :func:`backward` walks the recorded graph once
in reverse topological order, so each node's closure runs exactly once per
traversal and fan-out gradients are accumulated by summation.

A graph stays alive for as long as its output tensor is referenced, which
makes repeated backward passes over one forward computation cheap.  That
matters for the stochastic gradient gates: a :class:`GateDescriptor` draws a
fresh Bernoulli value for every gate node on every traversal, so Monte-Carlo
estimates of gated gradients are just repeated calls to :func:`backward`.
"""

from __future__ import annotations

import itertools
from typing import Iterable

import numpy as np

from ..errors import ContractError, ParameterError

_traversal_ids = itertools.count(1)


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Leaf tensors hold parameters or inputs; tensors returned by operations
    carry a :class:`Node` tying them into the recorded graph.  Gradients are
    accumulated on leaves only (interior gradients are transient).
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy of the value with no graph history and no gradient."""
        return Tensor(self.data.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = "leaf" if self.node is None else self.node.name
        return f"Tensor(shape={self.data.shape}, {tag}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation: inputs plus a gradient closure.

    ``backward_fn(out_grad, traversal_id)`` returns one gradient array (or
    None) per input, aligned with ``inputs``.
    """

    __slots__ = ("name", "inputs", "backward_fn")

    def __init__(self, name: str, inputs: tuple["Tensor", ...], backward_fn):
        self.name = name
        self.inputs = inputs
        self.backward_fn = backward_fn


class GateDescriptor:
    """Stochastic gradient gate: identity forward, Bernoulli-masked backward.

    ``probability`` is the chance that the mask is 0 (the gradient is
    dropped); with probability ``1 - probability`` the gradient passes
    unchanged.  Each descriptor owns a dedicated random stream seeded from
    ``seed_stream``, so a fixed seed reproduces the exact draw sequence.
    The probability may be rewritten between steps by a schedule.
    """

    __slots__ = ("probability", "seed_stream", "branch_tag", "_rng")

    def __init__(self, probability: float, seed_stream, branch_tag: str = "spatial"):
        _check_probability(probability)
        self.probability = float(probability)
        self.seed_stream = seed_stream
        self.branch_tag = branch_tag
        self._rng = np.random.default_rng(seed_stream)

    def draw(self) -> float:
        """One Bernoulli mask value in {0.0, 1.0} with P(0) = probability.

        Probabilities 0 and 1 short-circuit without consuming the stream, so
        a fully decayed schedule is bitwise identical to a never-gated run.
        """
        p = self.probability
        _check_probability(p)
        if p <= 0.0:
            return 1.0
        if p >= 1.0:
            return 0.0
        return 0.0 if self._rng.random() < p else 1.0

    def get_state(self) -> dict:
        return self._rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._rng.bit_generator.state = state


class SharedDraw:
    """Lets several gate nodes share one Bernoulli draw within a traversal.

    A kernel and its bias form a single gated unit: both must be masked by
    the same draw so the unit's whole gradient contribution is kept or
    dropped together.
    """

    __slots__ = ("gate", "_traversal", "_value")

    def __init__(self, gate: GateDescriptor):
        self.gate = gate
        self._traversal = -1
        self._value = 1.0

    def value(self, traversal_id: int) -> float:
        if traversal_id != self._traversal:
            self._value = self.gate.draw()
            self._traversal = traversal_id
        return self._value


def _check_probability(p) -> None:
    if not (0.0 <= float(p) <= 1.0):
        raise ParameterError(f"gate probability must lie in [0, 1], got {p}")


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the graph below ``root``.

    Only tensors participating in gradient flow are visited; constant
    sub-graphs (requires_grad False) are pruned.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for inp in tensor.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(
    loss: Tensor,
    params: Iterable[Tensor] | None = None,
    accumulate: bool = True,
) -> dict[Tensor, np.ndarray]:
    """Single reverse traversal from a scalar loss.

    Returns a map from leaf tensors (requires_grad True) to their gradient
    for this traversal.  When ``params`` is given the map covers exactly
    those tensors, with explicit zero arrays for parameters the loss never
    touched.  When ``accumulate`` is true the same gradients are also added
    into each leaf's ``grad`` slot.

    Every gate node on the graph draws one fresh Bernoulli value per call,
    so calling ``backward`` repeatedly on one graph yields independent
    gated-gradient samples.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor with no gradient path")

    traversal = next(_traversal_ids)
    order = _topo_order(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    leaf_grads: dict[Tensor, np.ndarray] = {}

    for tensor in reversed(order):
        grad = flowing.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor.node is None:
            if tensor.requires_grad:
                leaf_grads[tensor] = grad
            continue
        input_grads = tensor.node.backward_fn(grad, traversal)
        for inp, ig in zip(tensor.node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in flowing:
                flowing[key] = flowing[key] + ig
            else:
                flowing[key] = ig

    if accumulate:
        for tensor, grad in leaf_grads.items():
            if tensor.grad is None:
                tensor.grad = grad.copy()
            else:
                tensor.grad = tensor.grad + grad

    if params is not None:
        return {
            p: leaf_grads.get(p, np.zeros_like(p.data))
            for p in params
        }
    return leaf_grads


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
