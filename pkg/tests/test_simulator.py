import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncr import conn, pmp, simulator
from ncr.dynamics import rk4_step, unicycle

W = pmp.default_weights()
BOX = unicycle.default_bounds
ARCH = conn.Architecture(3, 4, (8,))


def constant_costate(lam_rows):
    """Stub network whose output ignores the state and equals ``lam_rows``."""
    arrays = conn.init(ARCH, 0).arrays()
    arrays[-2] = np.zeros_like(arrays[-2])
    arrays[-1] = np.asarray(lam_rows, dtype=np.float64).reshape(1, -1)
    return conn.ModelParams.from_arrays(ARCH, arrays)


ZERO = constant_costate(np.zeros((4, 3)))


def test_zero_costates_hold_state():
    rec = simulator.simulate(ZERO, simulator.SimConfig([0.3, -1.2, 0.8], steps=10), W, unicycle)
    assert np.all(rec.inputs == 0)
    assert np.all(rec.states == rec.states[0])


def test_zero_reference_is_identity(rng):
    params = conn.init(conn.Architecture(3, 4), 1)
    for _ in range(10):
        z = rng.uniform(-2, 2, size=3)
        u_a, lam_a = simulator.ncr_step(params, z, np.zeros(3), BOX, W, unicycle)
        lam = conn.forward(params, z)[0]
        np.testing.assert_array_equal(lam_a, lam)
        np.testing.assert_array_equal(u_a, np.clip(-0.5 * unicycle.g(z).T @ lam, BOX.lower, BOX.upper))


def test_inputs_within_bounds(rng):
    for _ in range(1000):
        lam = rng.normal(size=(4, 3)) * 20
        z = rng.uniform(-6, 6, size=3)
        u, _ = simulator.ncr_step(constant_costate(lam), z, rng.normal(size=3), BOX, W, unicycle)
        assert BOX.contains(u)


def test_error_state_and_angle_convention():
    lam = np.zeros((4, 3))
    lam[0] = [1.0, 0.0, 0.0]
    params = constant_costate(lam)
    z, zref = np.array([2.0, 2.0, 1.0]), np.array([1.0, 1.0, 1.0])
    u_err, _ = simulator.ncr_step(params, z, zref, BOX, W, unicycle)
    u_abs, _ = simulator.ncr_step(params, z, zref, BOX, W, unicycle, absolute_angle=True)
    np.testing.assert_allclose(u_err, [-0.5, 0.0])  # g at error angle 0
    np.testing.assert_allclose(u_abs, [-0.5 * np.cos(1.0), 0.0])


def test_single_step_shapes():
    rec = simulator.simulate(ZERO, simulator.SimConfig([1, 2, 3], steps=1), W, unicycle)
    assert rec.states.shape == (2, 3) and rec.inputs.shape == (1, 2)
    assert rec.costates.shape == (1, 3) and rec.step_times.shape == (1,)
    assert rec.controller == "NCR"


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 25), st.integers(0, 1000))
def test_record_lengths_and_bounds(steps, seed):
    params = conn.init(ARCH, seed)
    rng = np.random.default_rng(seed)
    rec = simulator.simulate(params, simulator.SimConfig(rng.uniform(-3, 3, 3), steps=steps), W, unicycle)
    rec.check()
    assert rec.times.shape == (steps + 1,)
    assert all(BOX.contains(u) for u in rec.inputs)
    # every transition is one RK4 step under the logged input
    for k in range(steps):
        np.testing.assert_array_equal(rec.states[k + 1], rk4_step(unicycle, rec.states[k], rec.inputs[k], 0.05))


def test_deterministic_except_timing():
    params = conn.init(ARCH, 3)
    cfg = simulator.SimConfig([1.0, -1.0, 0.5], steps=20)
    a = simulator.simulate(params, cfg, W, unicycle)
    b = simulator.simulate(params, cfg, W, unicycle)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.inputs.tobytes() == b.inputs.tobytes()


def test_timing_disabled():
    rec = simulator.simulate(ZERO, simulator.SimConfig([0, 0, 0], steps=3, timing=False), W, unicycle)
    assert rec.step_times is None


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        simulator.simulate(ZERO, simulator.SimConfig([0, 0], steps=3), W, unicycle)
    with pytest.raises(ValueError):
        simulator.SimConfig([0, 0, 0], z_ref=[1, 1])
    with pytest.raises(ValueError):
        simulator.SimConfig([0, 0, 0], steps=0)


def test_csv_round_trip(tmp_path):
    params = conn.init(ARCH, 2)
    rec = simulator.simulate(params, simulator.SimConfig([1.0, 0.5, -0.5], steps=6), W, unicycle)
    path = tmp_path / "traj.csv"
    rec.to_csv(path, comment="config_sha256=xyz")
    text = path.read_text().splitlines()
    assert text[0] == "# config_sha256=xyz"
    assert text[2] == "t,z1,z2,z3,u1,u2,lam1,lam2,lam3,step_wall_time_s"
    back = simulator.read_trajectory_csv(path)
    assert back.controller == "NCR"
    assert back.states.tobytes() == rec.states.tobytes()
    assert back.inputs.tobytes() == rec.inputs.tobytes()
    assert back.costates.tobytes() == rec.costates.tobytes()
    np.testing.assert_array_equal(back.step_times, rec.step_times)


def test_csv_without_timing_is_reproducible(tmp_path):
    params = conn.init(ARCH, 2)
    cfg = simulator.SimConfig([1.0, 0.5, -0.5], steps=6)
    for name in ("a.csv", "b.csv"):
        simulator.simulate(params, cfg, W, unicycle).to_csv(tmp_path / name, timing=False)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert "step_wall_time_s" not in (tmp_path / "a.csv").read_text()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_keeps_partial_record():
    lam = np.zeros((4, 3))
    lam[0] = [np.inf, 0, 0]
    with pytest.raises(simulator.SimulationError) as info:
        simulator.simulate(constant_costate(lam), simulator.SimConfig([0, 0, 0], steps=5), W, unicycle)
    assert info.value.step == 0
    assert info.value.record.states.shape == (1, 3)
