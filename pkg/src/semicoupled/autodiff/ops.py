"""Differentiable operations over :class:`~semicoupled.autodiff.tensor.Tensor`.

Everything runs in float64.  Each forward result is checked for finiteness;
overflow raises :class:`~semicoupled.errors.NumericError` instead of letting
NaN or Inf propagate silently.  Shape mismatches raise
:class:`~semicoupled.errors.DimensionError` naming the offending axes.

Available operations:

    elementwise      add, sub, mul, scale, add_n, relu, sigmoid
    structure        concat_channels, conv2d, linear, global_avg_pool,
                     avg_pool2d, batch_norm
    reductions       sum_all, mean_all
    gradient gating  stochastic_gate
    losses           mse, softmax_cross_entropy
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    DegenerateInputError,
    DimensionError,
    LabelError,
    NumericError,
    ParameterError,
)
from .tensor import GateDescriptor, Node, SharedDraw, Tensor


def as_tensor(value, requires_grad: bool = False) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suspends graph recording (pure inference)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _assert_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")


def _make(data: np.ndarray, name: str, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    _assert_finite(data, name)
    out = Tensor(data)
    if _GRAD_ENABLED[0] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(name, inputs, backward_fn)
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op} needs equal shapes, got {a.data.shape} and {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def backward_fn(g, _trav):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _make(a.data + b.data, "add", (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def backward_fn(g, _trav):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    return _make(a.data - b.data, "sub", (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")

    def backward_fn(g, _trav):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    return _make(a.data * b.data, "mul", (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a plain (non-differentiated) scalar constant."""
    factor = float(factor)

    def backward_fn(g, _trav):
        return (g * factor,)

    return _make(a.data * factor, "scale", (a,), backward_fn)


def add_n(tensors: list[Tensor]) -> Tensor:
    """Sum of equally shaped tensors as a single graph node."""
    if not tensors:
        raise DimensionError("add_n needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        _require_same_shape(first, t, "add_n")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total += t.data

    def backward_fn(g, _trav):
        return tuple(g if t.requires_grad else None for t in tensors)

    return _make(total, "add_n", tuple(tensors), backward_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward_fn(g, _trav):
        return (g * (x.data > 0.0),)

    return _make(out, "relu", (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    # Stable in both tails: exp is only ever taken of a non-positive value.
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward_fn(g, _trav):
        return (g * out * (1.0 - out),)

    return _make(out, "sigmoid", (x,), backward_fn)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    if not tensors:
        raise DimensionError("concat_channels needs at least one tensor")
    base = tensors[0].data.shape
    if len(base) != 4:
        raise DimensionError(f"concat_channels expects NCHW tensors, got shape {base}")
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != 4 or s[0] != base[0] or s[2:] != base[2:]:
            raise DimensionError(
                f"concat_channels needs matching batch and spatial axes, got {base} and {s}"
            )
    out = np.concatenate([t.data for t in tensors], axis=1)
    sizes = [t.data.shape[1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g, _trav):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _make(out, "concat_channels", tuple(tensors), backward_fn)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[N,C,H,W] -> [N, Ho*Wo, C*kh*kw] patch matrix."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)


def _col2im(
    dcols: np.ndarray,
    x_shape: tuple[int, ...],
    kh: int,
    kw: int,
    stride: int,
    padding: int,
    ho: int,
    wo: int,
) -> np.ndarray:
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    patches = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += patches[:, :, :, :, i, j]
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an FCKK kernel plus bias.

    Output spatial size is ``(H + 2 padding - K) // stride + 1`` per axis.
    The patch matrix is rebuilt during backward instead of being stored, so
    graph memory stays proportional to activations.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be NCHW, got shape {x.data.shape}")
    if kernel.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be FCKK, got shape {kernel.data.shape}")
    if stride < 1:
        raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"conv2d padding must be >= 0, got {padding}")
    n, c, h, w = x.data.shape
    f, ck, kh, kw = kernel.data.shape
    if ck != c:
        raise DimensionError(f"conv2d kernel expects {ck} input channels, input has {c}")
    if bias.data.shape != (f,):
        raise DimensionError(f"conv2d bias must have shape ({f},), got {bias.data.shape}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    cols = _im2col(x.data, kh, kw, stride, padding)
    wmat = kernel.data.reshape(f, -1)
    out = np.matmul(cols, wmat.T)
    out += bias.data
    out = out.transpose(0, 2, 1).reshape(n, f, ho, wo)

    def backward_fn(g, _trav):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n, ho * wo, f)
        dk = db = dx = None
        if kernel.requires_grad or x.requires_grad:
            if kernel.requires_grad:
                cols_b = _im2col(x.data, kh, kw, stride, padding)
                dk = (
                    gmat.reshape(n * ho * wo, f).T @ cols_b.reshape(n * ho * wo, -1)
                ).reshape(kernel.data.shape)
            if x.requires_grad:
                dcols = np.matmul(gmat, wmat)
                dx = _col2im(dcols, x.data.shape, kh, kw, stride, padding, ho, wo)
        if bias.requires_grad:
            db = gmat.sum(axis=(0, 1))
        return (dx, dk, db)

    return _make(out, "conv2d", (x, kernel, bias), backward_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for [N, D] inputs."""
    if x.data.ndim != 2:
        raise DimensionError(f"linear input must be [N, D], got shape {x.data.shape}")
    n, d = x.data.shape
    if weight.data.ndim != 2 or weight.data.shape[0] != d:
        raise DimensionError(
            f"linear weight must be [{d}, M], got shape {weight.data.shape}"
        )
    m = weight.data.shape[1]
    if bias.data.shape != (m,):
        raise DimensionError(f"linear bias must have shape ({m},), got {bias.data.shape}")
    out = x.data @ weight.data + bias.data

    def backward_fn(g, _trav):
        return (
            g @ weight.data.T if x.requires_grad else None,
            x.data.T @ g if weight.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return _make(out, "linear", (x, weight, bias), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] spatial mean."""
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def backward_fn(g, _trav):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape),)

    return _make(out, "global_avg_pool", (x,), backward_fn)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling; spatial axes must divide by k."""
    if x.data.ndim != 4:
        raise DimensionError(f"avg_pool2d expects NCHW, got shape {x.data.shape}")
    if k < 1:
        raise ParameterError(f"avg_pool2d window must be >= 1, got {k}")
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool2d window {k} must divide spatial axes {h}x{w}")
    blocks = x.data.reshape(n, c, h // k, k, w // k, k)
    out = blocks.mean(axis=(3, 5))

    def backward_fn(g, _trav):
        expanded = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return (expanded / (k * k),)

    return _make(out, "avg_pool2d", (x,), backward_fn)


@dataclass
class RunningStats:
    """Per-channel running mean/variance for batch normalisation."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "RunningStats":
        return cls(
            mean=np.zeros(channels, dtype=np.float64),
            var=np.ones(channels, dtype=np.float64),
            momentum=momentum,
            eps=eps,
        )


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool,
    update_stats: bool = True,
) -> Tensor:
    """Channelwise batch normalisation over an NCHW tensor.

    Training mode normalises by batch statistics (over N, H, W) and folds
    them into the running estimates; eval mode uses the running estimates.
    A training batch with fewer than two values per channel is degenerate.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"batch_norm expects NCHW, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"batch_norm gamma/beta must have shape ({c},), got {gamma.data.shape} and {beta.data.shape}"
        )
    if stats.mean.shape != (c,):
        raise DimensionError(
            f"batch_norm running stats cover {stats.mean.shape[0]} channels, input has {c}"
        )
    gsh = gamma.data[None, :, None, None]

    if training:
        m = n * h * w
        if m < 2:
            raise DegenerateInputError(
                f"batch_norm training needs at least 2 values per channel, got {m}"
            )
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + stats.eps)
        xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
        if update_stats:
            stats.mean = (1.0 - stats.momentum) * stats.mean + stats.momentum * mu
            stats.var = (1.0 - stats.momentum) * stats.var + stats.momentum * var
        out = gsh * xhat + beta.data[None, :, None, None]

        def backward_fn(g, _trav):
            dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            dx = None
            if x.requires_grad:
                dxhat = g * gsh
                sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv_std[None, :, None, None] / m) * (
                    m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
                )
            return (dx, dgamma, dbeta)

    else:
        inv_std = 1.0 / np.sqrt(stats.var + stats.eps)
        xhat = (x.data - stats.mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = gsh * xhat + beta.data[None, :, None, None]

        def backward_fn(g, _trav):
            dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            dx = g * gsh * inv_std[None, :, None, None] if x.requires_grad else None
            return (dx, dgamma, dbeta)

    return _make(out, "batch_norm", (x, gamma, beta), backward_fn)


# ---------------------------------------------------------------------------
# gradient gating
# ---------------------------------------------------------------------------

def stochastic_gate(x: Tensor, gate: GateDescriptor, shared: SharedDraw | None = None) -> Tensor:
    """Identity in forward; backward multiplies the gradient by a Bernoulli draw.

    Each gate node draws once per backward traversal.  Passing a
    :class:`SharedDraw` makes several nodes (e.g. a kernel and its bias) use
    a single draw within the same traversal.
    """
    if shared is not None and shared.gate is not gate:
        raise ParameterError("shared draw must wrap the same gate descriptor")
    _check = gate.probability  # validates eagerly via descriptor invariants
    if not (0.0 <= _check <= 1.0):
        raise ParameterError(f"gate probability must lie in [0, 1], got {_check}")

    def backward_fn(g, traversal):
        b = shared.value(traversal) if shared is not None else gate.draw()
        return (g * b,)

    return _make(x.data.copy(), "stochastic_gate", (x,), backward_fn)


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward_fn(g, _trav):
        return (np.full(x.data.shape, float(g)),)

    return _make(out, "sum_all", (x,), backward_fn)


def mean_all(x: Tensor) -> Tensor:
    count = x.data.size
    out = np.asarray(x.data.mean())

    def backward_fn(g, _trav):
        return (np.full(x.data.shape, float(g) / count),)

    return _make(out, "mean_all", (x,), backward_fn)


def mse(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements; differentiable in both arguments."""
    _require_same_shape(prediction, target, "mse")
    diff = prediction.data - target.data
    count = diff.size
    out = np.asarray((diff * diff).mean())

    def backward_fn(g, _trav):
        base = (2.0 * float(g) / count) * diff
        return (
            base if prediction.requires_grad else None,
            -base if target.requires_grad else None,
        )

    return _make(out, "mse", (prediction, target), backward_fn)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer class labels.

    ``logits`` is [N, K]; ``labels`` is an integer array of shape [N] with
    values in [0, K).  Computed via a shifted log-sum-exp, so large logits do
    not overflow.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [N, K] logits, got {logits.data.shape}")
    n, k = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(
            f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]"
        )

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    out = np.asarray(-log_probs[np.arange(n), labels].mean())
    probs = exp / denom

    def backward_fn(g, _trav):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (float(g) / n),)

    return _make(out, "softmax_cross_entropy", (logits,), backward_fn)


def time_average(tensors: list[Tensor]) -> Tensor:
    """Arithmetic mean of a list of equally shaped tensors (one graph node pair)."""
    return scale(add_n(tensors), 1.0 / len(tensors))
