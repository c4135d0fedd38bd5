import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imuaug.numerics import (AdamState, ContractError, NonFiniteError, ParamVector, activation,
                             activation_grad, adam_update, affine, fmt_float, max_relative_error,
                             maxout, numeric_gradient, sgd_update, sigmoid, softmax, uniform_init)


def pv(*vals):
    return ParamVector(np.array(vals, dtype=float), (("w", (len(vals),)),))


# -- affine ------------------------------------------------------------------

def test_affine_identity():
    np.testing.assert_array_equal(affine(np.eye(2), [3.0, -1.0], np.zeros(2)), [3.0, -1.0])


def test_affine_zero_weights():
    np.testing.assert_array_equal(affine(np.zeros((2, 5)), np.arange(5.0), [1.0, 2.0]), [1.0, 2.0])


def test_affine_direct():
    np.testing.assert_array_equal(affine([[1, 2], [3, 4]], [1, 1], [0, 0]), [3.0, 7.0])


def test_affine_batched_rows_match_single():
    rng = np.random.default_rng(0)
    W, b, X = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=(6, 4))
    batch = affine(W, X, b)
    for k in range(6):
        np.testing.assert_allclose(batch[k], affine(W, X[k], b), rtol=0, atol=1e-15)


def test_affine_shape_mismatch():
    with pytest.raises(ContractError):
        affine(np.eye(2), [1.0, 2.0, 3.0], np.zeros(2))
    with pytest.raises(ContractError):
        affine(np.eye(2), [1.0, 2.0], np.zeros(3))


# -- activations ---------------------------------------------------------------

def test_activation_values():
    assert activation("sigmoid", 0.0) == 0.5
    assert activation("tanh", 0.0) == 0.0
    assert activation("sigmoid", math.log(3)) == pytest.approx(0.75, abs=1e-15)
    np.testing.assert_array_equal(activation("maxout", [1, -2, 0, 5]), [1, 5])
    np.testing.assert_array_equal(activation("rectifier", [-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])


def test_sigmoid_extreme_arguments_stay_finite():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        out = sigmoid(np.array([-1000.0, -40.0, 40.0, 1000.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[-1] == 1.0


def test_maxout_odd_width_rejected():
    with pytest.raises(ContractError):
        maxout(np.zeros(3))


def test_unknown_activation():
    with pytest.raises(ContractError):
        activation("softplus", np.zeros(2))


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "rectifier", "maxout"])
def test_activation_grad_matches_finite_differences(kind):
    rng = np.random.default_rng(3)
    z = rng.normal(size=8)
    if kind == "rectifier":
        z[np.abs(z) < 1e-3] = 0.5   # keep away from the kink
    up = rng.normal(size=activation(kind, z).shape)
    f = lambda zz: float(np.sum(up * activation(kind, zz)))
    assert max_relative_error(activation_grad(kind, z, up), numeric_gradient(f, z)) < 1e-6


# -- softmax -------------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_array_equal(softmax([1000.0, 1000.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([math.log(1), math.log(3)]), [0.25, 0.75], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(z, c):
    z = np.array(z)
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(softmax(z + c), p, rtol=0, atol=1e-12)


# -- optimizers ------------------------------------------------------------------

def test_sgd_examples():
    theta = pv(1.0, 1.0)
    np.testing.assert_array_equal(sgd_update(theta, pv(2.0, -4.0), 0.5).values, [0.0, 3.0])
    np.testing.assert_array_equal(sgd_update(theta, pv(0.0, 0.0), 0.5).values, theta.values)
    np.testing.assert_array_equal(sgd_update(theta, pv(2.0, -4.0), 0.0).values, theta.values)


def test_sgd_layout_mismatch():
    other = ParamVector(np.zeros(2), (("v", (2,)),))
    with pytest.raises(ContractError):
        sgd_update(pv(1.0, 1.0), other, 0.1)


def test_adam_zero_gradient_fresh_state():
    theta = pv(0.3, -0.2)
    new, state = adam_update(theta, pv(0.0, 0.0), AdamState.fresh(2), 0.01)
    np.testing.assert_array_equal(new.values, theta.values)
    np.testing.assert_array_equal(state.m, 0)
    np.testing.assert_array_equal(state.v, 0)
    assert state.step == 1


def test_adam_first_step_is_lr_times_sign():
    g = np.array([3.0, -0.25, 1e-3, -40.0])
    theta = ParamVector(np.zeros(4), (("w", (4,)),))
    new, _ = adam_update(theta, theta.with_values(g), AdamState.fresh(4), 0.01)
    np.testing.assert_allclose(new.values, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_zero_lr_still_updates_moments():
    theta = pv(1.0, 2.0)
    new, state = adam_update(theta, pv(1.0, -1.0), AdamState.fresh(2), 0.0)
    np.testing.assert_array_equal(new.values, theta.values)
    np.testing.assert_allclose(state.m, [0.1, -0.1])
    np.testing.assert_allclose(state.v, [0.001, 0.001])


def test_adam_against_hand_rolled_loop():
    rng = np.random.default_rng(5)
    grads = rng.normal(size=(5, 3))
    theta = ParamVector(rng.normal(size=3), (("w", (3,)),))
    state = AdamState.fresh(3)
    x, m, v = theta.values.copy(), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        theta, state = adam_update(theta, theta.with_values(g), state, 0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(theta.values, x, rtol=1e-14)


def test_optimizers_are_pure():
    rng = np.random.default_rng(9)
    theta = ParamVector(rng.normal(size=6), (("a", (2, 3)),))
    grad = theta.with_values(rng.normal(size=6))
    before = theta.values.copy(), grad.values.copy()
    s0 = AdamState.fresh(6)
    a1, sa = adam_update(theta, grad, s0, 0.01)
    a2, sb = adam_update(theta, grad, s0, 0.01)
    assert a1.values.tobytes() == a2.values.tobytes()
    assert sa.m.tobytes() == sb.m.tobytes() and s0.step == 0
    assert sgd_update(theta, grad, 0.1).values.tobytes() == sgd_update(theta, grad, 0.1).values.tobytes()
    np.testing.assert_array_equal(theta.values, before[0])
    np.testing.assert_array_equal(grad.values, before[1])


# -- numeric gradient ------------------------------------------------------------

def test_numeric_gradient_examples():
    assert numeric_gradient(lambda x: x * x, 3.0, 1e-5) == pytest.approx(6.0, abs=1e-6)
    assert numeric_gradient(lambda x: math.sin(x), 0.0, 1e-5) == pytest.approx(1.0, abs=1e-8)
    g = numeric_gradient(lambda p: 4.0, pv(1.0, 2.0, 3.0))
    np.testing.assert_array_equal(g.values, 0.0)


def test_numeric_gradient_on_arrays_and_paramvectors():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.0])
    g = numeric_gradient(lambda v: v @ A @ v, x)
    np.testing.assert_allclose(g, 2 * A @ x, atol=1e-8)
    p = ParamVector(x.copy(), (("x", (2,)),))
    gp = numeric_gradient(lambda q: q["x"] @ A @ q["x"], p)
    np.testing.assert_allclose(gp["x"], 2 * A @ x, atol=1e-8)
    np.testing.assert_array_equal(p.values, x)   # input untouched


def test_numeric_gradient_names_non_finite_coordinate():
    # only the second coordinate's step leaves the domain
    f = lambda v: math.log(v[1]) if v[1] > 0 else float("nan")
    with pytest.raises(NonFiniteError, match="coordinate 1"):
        numeric_gradient(f, np.array([1.0, 1e-6]))


def test_max_relative_error_floor():
    assert max_relative_error([0.0], [1e-9]) == pytest.approx(1e-3)
    assert max_relative_error([2.0], [2.0]) == 0.0


# -- ParamVector ------------------------------------------------------------------

def test_paramvector_views_and_roundtrip(rng):
    layout = (("W", (3, 2)), ("b", (3,)))
    p = uniform_init(rng, layout, zero=("b",))
    assert np.all(np.abs(p["W"]) <= 0.08) and np.all(p["b"] == 0)
    p["b"][1] = 7.0
    assert p.values[7] == 7.0
    q = ParamVector.from_dict(p.to_dict(), layout)
    assert q.values.tobytes() == p.values.tobytes()
    r = ParamVector.from_json(json.loads(json.dumps(p.to_json())))
    assert r.values.tobytes() == p.values.tobytes() and r.layout == p.layout


def test_paramvector_contract_errors():
    with pytest.raises(ContractError):
        ParamVector(np.zeros(5), (("a", (2, 2)),))
    with pytest.raises(ContractError):
        ParamVector(np.zeros(2), (("a", (1,)), ("a", (1,))))
    with pytest.raises(ContractError):
        ParamVector.from_dict({"a": np.zeros(3)}, (("a", (2,)),))


@settings(max_examples=100, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_fmt_float_round_trips(x):
    assert float(fmt_float(np.float64(x))) == x
    assert "np." not in fmt_float(np.float64(x))
