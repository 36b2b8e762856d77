"""Schedule, Adam, clipping and accumulation tests with worked examples."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semicoupled.autodiff import Tensor
from semicoupled.errors import ConfigError, ParameterError
from semicoupled.network import build_gates
from semicoupled.optim import (
    EMA_MOMENTUM,
    AccumulationBuffer,
    AdamState,
    SwitchSchedule,
    adam_step,
    apply_schedule,
    gate_probabilities,
    update_q,
)

LN4 = math.log(4.0)


# ---------------------------------------------------------------------------
# gate probability schedules
# ---------------------------------------------------------------------------

def test_off_mode_never_blocks():
    sched = SwitchSchedule(mode="off")
    for step in (0, 1, 10_000):
        assert gate_probabilities(sched, step) == (0.0, 0.0)


def test_symmetric_linear_decay():
    sched = SwitchSchedule(mode="stsgd", p_spatial=0.5, p_temporal=0.4, decay_steps=100)
    assert gate_probabilities(sched, 0) == (0.5, 0.4)
    ps, pt = gate_probabilities(sched, 50)
    assert math.isclose(ps, 0.25, abs_tol=1e-15) and math.isclose(pt, 0.2, abs_tol=1e-15)
    assert gate_probabilities(sched, 100) == (0.0, 0.0)
    assert gate_probabilities(sched, 101) == (0.0, 0.0)
    ps, pt = gate_probabilities(sched, 25)
    assert math.isclose(ps, 0.375, abs_tol=1e-15)


def test_adaptive_mode_splits_by_q():
    sched = SwitchSchedule(mode="astsgd", q=0.8)
    ps, pt = gate_probabilities(sched, 0)
    assert math.isclose(ps, 0.2, abs_tol=1e-15) and pt == 0.8


def test_apply_schedule_writes_every_pair():
    gates = build_gates(3, seed=0)
    sched = SwitchSchedule(mode="astsgd", q=0.9)
    ps, pt = apply_schedule(gates, sched, 0)
    assert math.isclose(ps, 0.1, abs_tol=1e-15) and pt == 0.9
    for pair in gates:
        assert pair.spatial.probability == ps
        assert pair.temporal.probability == pt


def test_schedule_validation():
    with pytest.raises(ConfigError):
        SwitchSchedule(mode="sgd")
    with pytest.raises(ConfigError):
        SwitchSchedule(p_spatial=1.5)
    with pytest.raises(ConfigError):
        SwitchSchedule(q0=-0.2)
    with pytest.raises(ConfigError):
        SwitchSchedule(decay_steps=0)
    with pytest.raises(ConfigError):
        SwitchSchedule(thresh=0.0)
    with pytest.raises(ConfigError):
        SwitchSchedule(alpha=-1.0)
    with pytest.raises(ConfigError):
        SwitchSchedule(init_main_loss=0.05, thresh=0.1)


# ---------------------------------------------------------------------------
# adaptive ratio update: worked examples
# ---------------------------------------------------------------------------

def adaptive(init=LN4, thresh=0.1, q0=0.5, alpha=1.0):
    return SwitchSchedule(mode="astsgd", q0=q0, thresh=thresh, alpha=alpha,
                          init_main_loss=init)


def test_update_q_at_threshold_returns_floor():
    sched = adaptive()
    # spatial loss exactly at thresh: hinge term vanishes, q = q0
    assert abs(update_q(sched, loss_spatial=0.1, loss_main=2.0) - 0.5) <= 1e-12
    assert abs(update_q(sched, loss_spatial=0.02, loss_main=5.0) - 0.5) <= 1e-12


def test_update_q_at_initial_loss_saturates():
    sched = adaptive()
    # untrained regime: both losses at the initial level, ratio term = 1
    q = update_q(sched, loss_spatial=LN4, loss_main=LN4)
    assert abs(q - 1.0) <= 1e-12


def test_update_q_midpoint_worked_example():
    sched = adaptive()
    mid = (0.1 + LN4) / 2.0
    # fraction = 1/2 and equal losses make the multiplier 1: q = q0 + (1-q0)/2
    q = update_q(sched, loss_spatial=mid, loss_main=mid)
    assert abs(q - 0.75) <= 1e-12


def test_update_q_clamps_to_unit_interval():
    sched = adaptive(alpha=5.0)
    assert update_q(sched, loss_spatial=1.0, loss_main=50.0) == 1.0
    sched2 = adaptive(q0=0.0, alpha=10.0)
    assert update_q(sched2, loss_spatial=1.0, loss_main=0.0) == 0.0


def test_update_q_explicit_formula():
    sched = adaptive(init=2.0, thresh=0.5, q0=0.3, alpha=0.7)
    ls, lm = 1.1, 0.9
    expected = 0.3 + 0.7 * ((1.1 - 0.5) / (2.0 - 0.5)) * (0.7 * (lm / (ls + 1e-12) - 1.0) + 1.0)
    assert abs(update_q(sched, ls, lm) - expected) <= 1e-15
    assert sched.q == update_q(sched, ls, lm)


def test_update_q_requires_initial_loss():
    sched = SwitchSchedule(mode="astsgd")
    with pytest.raises(ConfigError):
        update_q(sched, 1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(
    lg_small=st.floats(0.0, 5.0),
    delta=st.floats(0.0, 5.0),
    ls=st.floats(0.01, 3.0),
    alpha=st.floats(0.0, 3.0),
    q0=st.floats(0.0, 1.0),
)
def test_update_q_monotone_in_main_loss(lg_small, delta, ls, alpha, q0):
    # a worse main loss can never reduce the temporal blocking ratio
    sched = adaptive(init=4.0, thresh=0.01, q0=q0, alpha=alpha)
    low = update_q(sched, ls, lg_small)
    high = update_q(sched, ls, lg_small + delta)
    assert high >= low - 1e-12
    assert 0.0 <= low <= 1.0 and 0.0 <= high <= 1.0


# ---------------------------------------------------------------------------
# loss smoothing
# ---------------------------------------------------------------------------

def test_observe_initialises_then_averages():
    sched = SwitchSchedule()
    sched.observe(1.0, 2.0)
    assert sched.smoothed_main == 1.0 and sched.smoothed_spatial == 2.0
    sched.observe(2.0, None)
    assert abs(sched.smoothed_main - (0.9 * 1.0 + 0.1 * 2.0)) <= 1e-15
    assert sched.smoothed_spatial == 2.0
    sched.observe(0.0, 0.0)
    assert abs(sched.smoothed_main - 0.9 * 1.1) <= 1e-15
    assert abs(sched.smoothed_spatial - 0.9 * 2.0) <= 1e-15
    assert EMA_MOMENTUM == 0.9


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_reference(w0, grads, lr=0.1, b1=0.9, b2=0.999, eps=1e-8):
    w = np.asarray(w0, dtype=np.float64).copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t, g in enumerate(grads, start=1):
        g = np.asarray(g, dtype=np.float64)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
    return w


def test_adam_first_step_worked_example():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState(lr=0.1)
    adam_step({"w": w}, {"w": np.array([0.5, -0.25])}, state)
    # bias correction makes the first step lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0]) - 0.1 * np.array([0.5, -0.25]) / (np.array([0.5, 0.25]) + 1e-8)
    assert np.allclose(w.data, expected, atol=1e-15)
    assert state.step_count == 1


def test_adam_multi_step_matches_reference():
    rng = np.random.default_rng(5)
    w0 = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(7)]
    w = Tensor(w0.copy(), requires_grad=True)
    state = AdamState(lr=0.05)
    for g in grads:
        adam_step({"w": w}, {"w": g}, state)
    assert np.allclose(w.data, adam_reference(w0, grads, lr=0.05), atol=1e-14)
    assert state.step_count == 7


def test_adam_tracks_parameters_independently():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState(lr=0.1)
    adam_step({"a": a, "b": b}, {"a": np.ones(2), "b": -np.ones(3)}, state)
    assert set(state.m) == {"a", "b"}
    assert np.all(a.data < 0.0) and np.all(b.data > 0.0)


def test_adam_shape_and_config_validation():
    w = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ParameterError):
        adam_step({"w": w}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(ConfigError):
        AdamState(lr=0.0)
    with pytest.raises(ConfigError):
        AdamState(beta1=1.0)
    with pytest.raises(ConfigError):
        AdamState(beta2=-0.1)


# ---------------------------------------------------------------------------
# accumulation and clipping
# ---------------------------------------------------------------------------

def test_buffer_flushes_arithmetic_mean():
    buf = AccumulationBuffer(flush_every=3)
    assert buf.add({"w": np.array([1.0])}) is None
    assert buf.add({"w": np.array([2.0])}) is None
    out = buf.add({"w": np.array([3.0])})
    assert np.array_equal(out["w"], [2.0])
    # buffer restarts cleanly after a flush
    assert buf.add({"w": np.array([10.0])}) is None
    assert buf.add({"w": np.array([10.0])}) is None
    assert np.array_equal(buf.add({"w": np.array([4.0])})["w"], [8.0])


def test_buffer_clips_only_designated_entries():
    buf = AccumulationBuffer(flush_every=1, clip_range=(-5.0, 5.0),
                             clip_names={"layer0.temporal_kernel"})
    out = buf.add({
        "layer0.temporal_kernel": np.array([10.0, -7.0, 1.0]),
        "layer0.spatial_kernel": np.array([10.0, -7.0, 1.0]),
    })
    assert np.array_equal(out["layer0.temporal_kernel"], [5.0, -5.0, 1.0])
    assert np.array_equal(out["layer0.spatial_kernel"], [10.0, -7.0, 1.0])


def test_buffer_clips_before_averaging():
    buf = AccumulationBuffer(flush_every=2, clip_range=(-1.0, 1.0), clip_names={"w"})
    buf.add({"w": np.array([100.0])})
    out = buf.add({"w": np.array([0.0])})
    # clip(100) = 1, then mean(1, 0) = 0.5; clipping the mean would give 0.5 too,
    # so distinguish with an asymmetric pair
    assert np.array_equal(out["w"], [0.5])
    buf2 = AccumulationBuffer(flush_every=2, clip_range=(-1.0, 1.0), clip_names={"w"})
    buf2.add({"w": np.array([100.0])})
    out2 = buf2.add({"w": np.array([-100.0])})
    assert np.array_equal(out2["w"], [0.0])


def test_buffer_passthrough_mode():
    buf = AccumulationBuffer(flush_every=1)
    g = {"w": np.array([3.0, 4.0])}
    assert np.array_equal(buf.add(g)["w"], [3.0, 4.0])


def test_buffer_does_not_mutate_caller_arrays():
    buf = AccumulationBuffer(flush_every=2, clip_names={"w"})
    g = np.array([100.0])
    buf.add({"w": g})
    assert g[0] == 100.0


def test_buffer_validation():
    with pytest.raises(ConfigError):
        AccumulationBuffer(flush_every=0)
    with pytest.raises(ParameterError):
        AccumulationBuffer(flush_every=1, clip_range=(2.0, -2.0))
