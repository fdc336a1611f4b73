import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncr import autodiff as ad
from ncr.dynamics import (
    InputBounds,
    IntegrationError,
    PlantDescriptor,
    double_integrator,
    get_plant,
    rk4_batch,
    rk4_step,
    rollout,
    unicycle,
    unicycle_drift,
    unicycle_input_matrix,
)


def arc(v, w, t):
    """Closed-form unicycle pose from the origin under constant (v, w)."""
    return np.array([v / w * np.sin(w * t), v / w * (1 - np.cos(w * t)), w * t])


@pytest.mark.parametrize("z", [[0, 0, 0], [-5.24, 4.11, 2.72], [1, 1, 0]])
def test_drift_is_zero(z):
    np.testing.assert_array_equal(unicycle_drift(z), np.zeros(3))


@pytest.mark.parametrize("theta, expected", [
    (0.0, [[1, 0], [0, 0], [0, 1]]),
    (np.pi / 2, [[0, 0], [1, 0], [0, 1]]),
    (np.pi / 4, [[np.sqrt(2) / 2, 0], [np.sqrt(2) / 2, 0], [0, 1]]),
])
def test_input_matrix(theta, expected):
    np.testing.assert_allclose(unicycle_input_matrix([0.3, -0.7, theta]), expected, atol=1e-15)


@pytest.mark.parametrize("fn", [unicycle_drift, unicycle_input_matrix])
def test_wrong_state_length_rejected(fn):
    with pytest.raises(ValueError):
        fn([0.0, 0.0])


def test_zero_input_keeps_state(rng):
    for _ in range(20):
        z = rng.normal(size=3) * 3
        assert np.array_equal(rk4_step(unicycle, z, [0.0, 0.0], 0.05), z)


def test_straight_line_exact():
    assert np.array_equal(rk4_step(unicycle, [0, 0, 0], [1, 0], 0.05), [0.05, 0.0, 0.0])


def test_arc_oracle():
    z = rk4_step(unicycle, [0, 0, 0], [1, 1], 0.05)
    np.testing.assert_allclose(z, arc(1.0, 1.0, 0.05), rtol=0, atol=1e-8)


def test_rk4_fourth_order():
    T, v, w = 2.0, 1.0, 1.5

    def terminal_error(steps):
        z = rollout(unicycle, [0, 0, 0], [[v, w]] * steps, T / steps)[-1]
        return np.linalg.norm(z - arc(v, w, T))

    ratio = terminal_error(20) / terminal_error(40)
    assert 12 <= ratio <= 20, ratio


def test_dt_must_be_positive():
    with pytest.raises(ValueError):
        rk4_step(unicycle, [0, 0, 0], [1, 0], 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_names_entry():
    blowup = PlantDescriptor("blowup", 2, 1, lambda z: np.array([0.0, 1e308 * 1e10]),
                             lambda z: np.zeros((2, 1)))
    with pytest.raises(IntegrationError) as info:
        rk4_step(blowup, [0.0, 0.0], [0.0], 0.1)
    assert info.value.entry == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rollout_reports_step_index():
    def drift(z):
        return np.array([z[0] ** 2])

    plant = PlantDescriptor("quad", 1, 1, drift, lambda z: np.zeros((1, 1)))
    with pytest.raises(IntegrationError) as info:
        rollout(plant, [1e100], [[0.0]] * 5, 1.0)
    assert info.value.step is not None and info.value.entry == 0


def test_rollout_examples():
    z0 = np.array([0.4, -0.2, 1.0])
    np.testing.assert_array_equal(rollout(unicycle, z0, [], 0.1), [z0])
    np.testing.assert_array_equal(rollout(unicycle, z0, [[0, 0], [0, 0]], 0.1), [z0, z0, z0])
    x = rollout(unicycle, [0, 0, 0], [[1, 0]] * 10, 0.1)[-1, 0]
    assert x == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-4, 4)), max_size=15),
       st.tuples(*[st.floats(-3, 3)] * 3))
def test_rollout_length(inputs, z0):
    out = rollout(unicycle, z0, inputs, 0.05)
    assert out.shape == (len(inputs) + 1, 3)
    assert np.array_equal(out[0], z0)


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.floats(-3, 3)] * 3), st.integers(0, 12))
def test_zero_inputs_constant(z0, n):
    out = rollout(unicycle, z0, np.zeros((n, 2)), 0.05)
    assert np.all(out == np.asarray(z0))


def test_input_bounds_validation():
    b = InputBounds([-1, -4], [1, 4])
    assert b.contains([1, -4]) and not b.contains([1.01, 0])
    with pytest.raises(ValueError):
        InputBounds([1, 0], [0, 1])
    with pytest.raises(ValueError):
        InputBounds([-np.inf, 0], [0, 1])


def test_registry():
    assert get_plant("unicycle") is unicycle
    assert get_plant("double_integrator") is double_integrator
    with pytest.raises(KeyError):
        get_plant("pendulum")


def test_batch_matches_single(rng):
    Z = rng.normal(size=(6, 3))
    U = rng.normal(size=(6, 2))
    out = rk4_batch(unicycle, Z, U, 0.05)
    for r in range(6):
        np.testing.assert_allclose(out[r], rk4_step(unicycle, Z[r], U[r], 0.05), rtol=0, atol=1e-15)


@pytest.mark.parametrize("plant", [unicycle, double_integrator], ids=lambda p: p.name)
def test_fused_tape_step_matches_elementary_ops(plant, rng):
    Z0 = rng.normal(size=(4, plant.p))
    U0 = rng.normal(size=(4, plant.q))
    W = rng.normal(size=(4, plant.p))
    grads = []
    for fused in (True, False):
        tape = ad.Tape()
        Z, U = tape.variable(Z0), tape.variable(U0)
        out = rk4_batch(plant, Z, U, 0.1, fused=fused)
        g = ad.backward(ad.total(ad.square(out) * W))
        grads.append((out.value, g.wrt(Z), g.wrt(U)))
    for a, b in zip(*grads):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_generic_plant_uses_closures(rng):
    plant = PlantDescriptor("generic_unicycle", 3, 2, unicycle_drift, unicycle_input_matrix)
    z, u = rng.normal(size=3), rng.normal(size=2)
    np.testing.assert_allclose(rk4_step(plant, z, u, 0.05), rk4_step(unicycle, z, u, 0.05), atol=1e-15)
