"""Independent reference implementations used to cross-check the library.

Everything here is written in the most literal way possible (quadruple
loops, direct formula transcriptions) and shares no code with the package.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_naive(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                 stride: int = 1, padding: int = 0) -> np.ndarray:
    """Quadruple-loop cross-correlation oracle for NCHW inputs."""
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    assert ck == c
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for oi in range(ho):
                for oj in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (
                                    x[ni, ci, oi * stride + ki, oj * stride + kj]
                                    * kernel[fi, ci, ki, kj]
                                )
                    out[ni, fi, oi, oj] = acc + bias[fi]
    return out


def avg_pool_naive(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // k, w // k))
    for oi in range(h // k):
        for oj in range(w // k):
            out[:, :, oi, oj] = x[:, :, oi * k:(oi + 1) * k, oj * k:(oj + 1) * k].mean(axis=(2, 3))
    return out


def softmax_ce_naive(logits: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for row, label in zip(logits, labels):
        m = row.max()
        lse = m + math.log(np.exp(row - m).sum())
        total += lse - row[label]
    return total / len(labels)


def batch_norm_train_naive(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                           eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    xhat = (x - mu[None, :, None, None]) / np.sqrt(var + eps)[None, :, None, None]
    return gamma[None, :, None, None] * xhat + beta[None, :, None, None]


def fd_gradient(forward, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued closure.

    ``forward`` must recompute the loss from the current contents of
    ``array``, which is perturbed in place one component at a time.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        f_plus = forward()
        flat[i] = saved - eps
        f_minus = forward()
        flat[i] = saved
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Componentwise |a - n| / max(|a|, |n|, floor), reduced with max."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max())


def skill_counts_naive(pred: np.ndarray, label: np.ndarray, threshold: float = 0.5):
    """Loop-based hit/miss/false-alarm/correct-negative counting."""
    hits = misses = false_alarms = correct_neg = 0
    for p, l in zip(pred.reshape(-1), label.reshape(-1)):
        pb = 1 if p >= threshold else 0
        lb = 1 if l >= threshold else 0
        if pb and lb:
            hits += 1
        elif not pb and lb:
            misses += 1
        elif pb and not lb:
            false_alarms += 1
        else:
            correct_neg += 1
    return hits, misses, false_alarms, correct_neg


def correlation_naive(pred: np.ndarray, label: np.ndarray, eps: float = 1e-9) -> float:
    num = 0.0
    den_p = 0.0
    den_l = 0.0
    for p, l in zip(pred.reshape(-1), label.reshape(-1)):
        num += p * l
        den_p += p * p
        den_l += l * l
    return num / math.sqrt(den_p * den_l + eps)


def regression_accuracy_naive(preds: np.ndarray, labels: np.ndarray,
                              lam: float = 1.0, eps: float = 1e-6) -> float:
    total = 0.0
    preds = preds.reshape(-1)
    labels = labels.reshape(-1)
    for p, l in zip(preds, labels):
        total += math.floor(min(lam / (abs(p - l) + eps), 1.0))
    return total / preds.size


def enumerate_chain_lengths_naive(depth: int, length: int) -> dict[int, int]:
    """Exhaustive DFS over the layer-time grid; hops go down a layer or back a step."""
    counts: dict[int, int] = {}

    def walk(layer: int, t: int, hops: int) -> None:
        if layer == 0:
            counts[hops] = counts.get(hops, 0) + 1
            return
        walk(layer - 1, t, hops + 1)
        if t > 1:
            walk(layer, t - 1, hops + 1)

    walk(depth, length, 0)
    return counts
