"""Adam optimizer update rule."""

import numpy as np
import pytest

from synthbrain.errors import ShapeError
from synthbrain.nn.adam import EPS, AdamState, adam_step


def test_first_step_is_signed_lr():
    # With zero-initialised moments the bias corrections cancel and the
    # first update is -lr * g / (|g| + eps).
    rng = np.random.default_rng(0)
    g = rng.normal(size=(3, 4)).astype(np.float64)
    params = {"w": np.zeros((3, 4))}
    state = AdamState(params)
    adam_step(params, {"w": g}, state, lr=0.01)
    expected = -0.01 * g / (np.abs(g) + EPS)
    assert np.allclose(params["w"], expected, atol=1e-12)
    assert state.t == 1


def test_constant_gradient_steady_updates():
    # A constant gradient keeps mhat == g and vhat == g^2 at every step, so
    # each update moves by exactly -lr * sign(g) (up to eps).
    g = {"w": np.array([2.0, -3.0])}
    params = {"w": np.zeros(2)}
    state = AdamState(params)
    prev = params["w"].copy()
    for _ in range(5):
        adam_step(params, g, state, lr=0.1)
        step = params["w"] - prev
        assert np.allclose(step, [-0.1, 0.1], atol=1e-6)
        prev = params["w"].copy()


def test_moments_track_ewma():
    g = np.array([1.0])
    params = {"w": np.array([0.0])}
    state = AdamState(params)
    adam_step(params, {"w": g}, state, lr=0.0)
    adam_step(params, {"w": g}, state, lr=0.0)
    # m after two identical grads: (1-b1)(1 + b1) etc.
    assert state.m["w"][0] == pytest.approx(0.1 * (1 + 0.9))
    assert state.v["w"][0] == pytest.approx(0.001 * (1 + 0.999))


def test_shape_mismatch_rejected():
    params = {"w": np.zeros((2, 2))}
    state = AdamState(params)
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(3)}, state)
