"""Switch gradient schedules, Adam, clipping and accumulation.

Two gating schedules drive the stochastic gradient gates of the network:

* symmetric switching: both branches are gated with the same probability,
  starting at 0.5 and decaying linearly to 0 over a fixed horizon;
* adaptive switching: the temporal branch is gated with a dynamic ratio q
  and the spatial branch with 1 - q.  q is recomputed once per flushed
  optimizer step from smoothed losses:

      q = clip(q0 + (1 - q0) * max(0, L_s - thresh) / (InitL_g - thresh)
                      * (alpha * (L_g / (L_s + eps) - 1) + 1), 0, 1)

  At the start of training (L_s near its initial value) q is close to 1, so
  spatial gradients pass while temporal gradients are blocked; as the
  spatial goal is learned q falls toward q0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .autodiff.tensor import Tensor
from .errors import ConfigError, ParameterError

EMA_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass
class SwitchSchedule:
    """Gate-probability schedule plus its mutable training state."""

    mode: Literal["stsgd", "astsgd", "off"] = "astsgd"
    p_spatial: float = 0.5
    p_temporal: float = 0.5
    decay_steps: int = 1000
    q0: float = 0.5
    thresh: float = 0.1
    alpha: float = 1.0
    init_main_loss: float | None = None
    eps_div: float = 1e-12
    q: float = 1.0
    step_count: int = 0
    smoothed_main: float | None = None
    smoothed_spatial: float | None = None

    def __post_init__(self):
        if self.mode not in ("stsgd", "astsgd", "off"):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        for name in ("p_spatial", "p_temporal", "q0", "q"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.decay_steps < 1:
            raise ConfigError(f"decay_steps must be >= 1, got {self.decay_steps}")
        if self.thresh <= 0.0:
            raise ConfigError(f"thresh must be positive, got {self.thresh}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.init_main_loss is not None and self.init_main_loss <= self.thresh:
            raise ConfigError(
                f"initial main loss ({self.init_main_loss}) must exceed thresh ({self.thresh})"
            )

    def observe(self, loss_main: float, loss_spatial: float | None) -> None:
        """Fold fresh loss values into the EMA state (first value initialises)."""
        if self.smoothed_main is None:
            self.smoothed_main = float(loss_main)
        else:
            self.smoothed_main = EMA_MOMENTUM * self.smoothed_main + (1 - EMA_MOMENTUM) * float(loss_main)
        if loss_spatial is not None:
            if self.smoothed_spatial is None:
                self.smoothed_spatial = float(loss_spatial)
            else:
                self.smoothed_spatial = (
                    EMA_MOMENTUM * self.smoothed_spatial + (1 - EMA_MOMENTUM) * float(loss_spatial)
                )


def gate_probabilities(schedule: SwitchSchedule, step: int) -> tuple[float, float]:
    """(spatial branch probability, temporal branch probability) at a step.

    Probabilities are chances of *blocking* the branch gradient.  Mode "off"
    never blocks; symmetric mode decays both probabilities linearly to zero;
    adaptive mode blocks the temporal branch with probability q and the
    spatial branch with probability 1 - q.
    """
    if schedule.mode == "off":
        return 0.0, 0.0
    if schedule.mode == "stsgd":
        factor = max(0.0, 1.0 - step / schedule.decay_steps)
        return schedule.p_spatial * factor, schedule.p_temporal * factor
    return 1.0 - schedule.q, schedule.q


def update_q(schedule: SwitchSchedule, loss_spatial: float, loss_main: float) -> float:
    """Recompute the adaptive ratio q from (already smoothed) loss values."""
    if schedule.init_main_loss is None:
        raise ConfigError("update_q needs init_main_loss to be set on the schedule")
    if schedule.init_main_loss <= schedule.thresh:
        raise ConfigError(
            f"initial main loss ({schedule.init_main_loss}) must exceed thresh ({schedule.thresh})"
        )
    hinge = max(0.0, float(loss_spatial) - schedule.thresh)
    fraction = hinge / (schedule.init_main_loss - schedule.thresh)
    multiplier = schedule.alpha * (float(loss_main) / (float(loss_spatial) + schedule.eps_div) - 1.0) + 1.0
    q_raw = schedule.q0 + (1.0 - schedule.q0) * fraction * multiplier
    schedule.q = min(1.0, max(0.0, q_raw))
    return schedule.q


def apply_schedule(gates, schedule: SwitchSchedule, step: int) -> tuple[float, float]:
    """Write the step's probabilities into every layer's gate pair."""
    p_spatial, p_temporal = gate_probabilities(schedule, step)
    for pair in gates:
        pair.spatial.probability = p_spatial
        pair.temporal.probability = p_temporal
    return p_spatial, p_temporal


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, tensor in params.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ParameterError(
                f"gradient for {name} has shape {g.shape}, parameter is {tensor.data.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.data = tensor.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# clipping and accumulation
# ---------------------------------------------------------------------------

class AccumulationBuffer:
    """Sums micro-batch gradients and flushes their arithmetic mean.

    Entries listed in ``clip_names`` (the recurrent temporal banks) are
    clipped elementwise into ``clip_range`` before being added.
    """

    def __init__(
        self,
        flush_every: int,
        clip_range: tuple[float, float] = (-5.0, 5.0),
        clip_names: frozenset[str] | set[str] = frozenset(),
    ):
        if flush_every < 1:
            raise ConfigError(f"flush_every must be >= 1, got {flush_every}")
        lo, hi = clip_range
        if not lo < hi:
            raise ParameterError(f"clip range must satisfy lo < hi, got ({lo}, {hi})")
        self.flush_every = int(flush_every)
        self.clip_range = (float(lo), float(hi))
        self.clip_names = frozenset(clip_names)
        self.sums: dict[str, np.ndarray] = {}
        self.count = 0

    def add(self, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray] | None:
        """Clip, accumulate, and return the mean gradients when full."""
        lo, hi = self.clip_range
        for name, g in grads.items():
            g = np.clip(g, lo, hi) if name in self.clip_names else np.asarray(g, dtype=np.float64)
            if name in self.sums:
                self.sums[name] = self.sums[name] + g
            else:
                self.sums[name] = g.copy()
        self.count += 1
        if self.count < self.flush_every:
            return None
        mean = {name: total / self.count for name, total in self.sums.items()}
        self.sums = {}
        self.count = 0
        return mean
