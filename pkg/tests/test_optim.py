import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smelter.optim import OptimState, plateau_update, sgd_step


def _one(w, g, **kw):
    params = {"w": np.array([w], dtype=np.float64)}
    state = OptimState(**kw)
    sgd_step(params, {"w": np.array([g], dtype=np.float64)}, state)
    return params["w"][0], state


def test_vanilla_step():
    w, _ = _one(1.0, 1.0, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert w == pytest.approx(0.9)


def test_momentum_two_steps():
    params = {"w": np.zeros(1)}
    state = OptimState(lr=0.1, momentum=0.9, weight_decay=0.0)
    sgd_step(params, {"w": np.ones(1)}, state)
    assert params["w"][0] == pytest.approx(-0.1)
    sgd_step(params, {"w": np.ones(1)}, state)
    assert state.velocity["w"][0] == pytest.approx(-0.19)
    assert params["w"][0] == pytest.approx(-0.29)


def test_weight_decay_only():
    w, _ = _one(1.0, 0.0, lr=1e-3, momentum=0.9, weight_decay=5e-4)
    assert w == pytest.approx(0.9999995, abs=1e-12)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        sgd_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, OptimState())


def test_untouched_without_gradient():
    w = np.arange(4.0)
    sgd_step({"w": w, "frozen": w.copy()}, {"w": np.ones(4)}, OptimState(momentum=0, weight_decay=0, lr=1))
    np.testing.assert_array_equal(w, np.arange(4.0) - 1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-10, 10)), arrays(np.float64, 6, elements=st.floats(-10, 10)),
       st.floats(1e-4, 1.0))
def test_plain_gradient_descent_when_no_momentum(w, g, lr):
    expected = w - lr * g
    params = {"w": w.copy()}
    sgd_step(params, {"w": g}, OptimState(lr=lr, momentum=0.0, weight_decay=0.0))
    np.testing.assert_array_equal(params["w"], expected)


def test_plateau_first_reduction():
    state = OptimState(lr=1e-3, patience=2)
    assert plateau_update(state, 0.9) == (1e-3, False)
    assert plateau_update(state, 0.9) == (1e-3, False)
    lr, stopped = plateau_update(state, 0.9)
    assert lr == pytest.approx(1e-4) and not stopped


def test_plateau_increasing_never_reduces():
    state = OptimState(lr=1e-3)
    for acc in np.linspace(0.1, 1.0, 40):
        assert plateau_update(state, float(acc)) == (1e-3, False)


def test_plateau_stops_after_second_reduction():
    state = OptimState(lr=1e-3, patience=2)
    history = [plateau_update(state, 0.5) for _ in range(7)]
    lrs = [h[0] for h in history]
    assert lrs[2] == pytest.approx(1e-4) and lrs[4] == pytest.approx(1e-5)
    assert not history[5][1] and history[6][1]
    assert state.lr == pytest.approx(1e-5)


def test_plateau_rejects_bad_accuracy():
    with pytest.raises(ValueError):
        plateau_update(OptimState(), 1.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 4))
def test_lr_sequence_monotone_and_quantized(accs, patience):
    state = OptimState(lr=1e-3, patience=patience)
    prev = state.lr
    for a in accs:
        lr, _ = plateau_update(state, a)
        assert lr <= prev
        assert any(lr == pytest.approx(1e-3 / 10 ** j) for j in range(3))
        prev = lr
