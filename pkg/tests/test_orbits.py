import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from halonmpc.dynamics import cr3bp_rhs
from halonmpc.integrator import propagate_plant
from halonmpc.orbits import (
    ShootingError, find_plane_crossing, natural_reference, periodize, read_reference,
    reference_window, shoot_halo, sweep_family, write_reference,
)

from conftest import MU, X0, YDOT0_GUESS, Z0_GUESS


def dop853(state, span, mu=MU):
    return solve_ivp(lambda t, y: cr3bp_rhs(y, np.zeros(3), mu), (0.0, span), state,
                     method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]


def test_shooting_converges(nominal_orbit):
    o = nominal_orbit
    assert np.max(np.abs(o.crossing_residual)) < 1e-10
    assert o.initial_state[[1, 3, 5]] == pytest.approx([0.0, 0.0, 0.0])
    assert o.x0 == X0
    # frozen from this implementation; see the independent closure check below
    assert o.initial_state[2] == pytest.approx(0.027459, abs=2e-6)
    assert o.initial_state[4] == pytest.approx(0.896855, abs=2e-6)
    assert o.period == pytest.approx(2.00685, abs=1e-4)


def test_orbit_closes_under_independent_integrator(nominal_orbit):
    o = nominal_orbit
    end = dop853(o.initial_state, o.period)
    assert np.max(np.abs(end - o.initial_state)) < 1e-7
    half = dop853(o.initial_state, 0.5 * o.period)
    # symmetric orbit: perpendicular crossing of the x-z plane at half period
    assert np.max(np.abs(half[[1, 3, 5]])) < 1e-8


def test_earth_moon_mass_ratio_orbit():
    o = shoot_halo(0.98785, 0.0290, 0.8763, 0.01215)
    assert o.initial_state[2] == pytest.approx(0.0290, abs=1e-3)
    assert o.initial_state[4] == pytest.approx(0.8763, abs=1e-3)


def test_plane_crossing_is_located_precisely(nominal_orbit):
    c = find_plane_crossing(0.0, nominal_orbit.initial_state, MU)
    assert abs(c.state[1]) < 1e-12
    assert c.theta == pytest.approx(0.5 * nominal_orbit.period, rel=1e-12)


def test_shooting_failure_is_raised():
    with pytest.raises(ShootingError):
        shoot_halo(X0, Z0_GUESS, YDOT0_GUESS, MU, tol=1e-30, max_iter=5)
    with pytest.raises(ShootingError):
        # starting at rest: never comes back to the x-z plane moving the right way
        shoot_halo(0.5, 0.0, 0.0, MU, max_iter=3)


def test_periodize_fits_grid(nominal_orbit):
    ref = periodize(nominal_orbit, 0.01)
    n = ref.period_steps
    assert n == round(nominal_orbit.period / 0.01)
    assert ref.dtheta * n == pytest.approx(nominal_orbit.period, rel=1e-14)
    assert abs(ref.dtheta - 0.01) <= 0.01 / (2 * n)
    np.testing.assert_array_equal(ref.samples[0], ref.samples[-1])
    # only integration error separates the end of the natural arc from its start
    assert ref.shift_magnitude < 1e-8


def test_periodized_reference_is_nearly_natural(nominal_reference, circular_params):
    ref = nominal_reference
    jumps = [np.linalg.norm(propagate_plant(ref.thetas[k], ref.samples[k], np.zeros(3),
                                            ref.dtheta, circular_params, 40)
                            - ref.samples[k + 1]) for k in range(ref.period_steps)]
    assert max(jumps) < 1e-8


def test_periodize_without_grid_fit_applies_linear_shift(nominal_orbit):
    ref = periodize(nominal_orbit, 0.01, fit_grid=False)
    raw = periodize(nominal_orbit, 0.01, fit_grid=False, shift=False)
    assert ref.dtheta == 0.01
    n = ref.period_steps
    gap = raw.samples[0] - raw.samples[n]
    assert ref.shift_magnitude == pytest.approx(np.linalg.norm(gap))
    for k in (0, n // 3, n):
        np.testing.assert_allclose(ref.samples[k], raw.samples[k] + k / n * gap,
                                   rtol=0, atol=1e-14)
    with pytest.raises(ValueError):
        periodize(nominal_orbit, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(-1000, 1000), st.integers(1, 60))
def test_reference_window_wraps(nominal_reference, k, horizon):
    ref = nominal_reference
    win = reference_window(ref, k, horizon)
    assert win.shape == (horizon + 1, 6)
    for j in (0, horizon):
        np.testing.assert_array_equal(win[j], ref.samples[(k + j) % ref.period_steps])
    np.testing.assert_array_equal(ref.window(k, horizon), win)


def test_reference_round_trip(tmp_path, nominal_reference):
    csv_path, json_path = write_reference(nominal_reference, tmp_path / "ref.csv", {"x0": X0})
    assert csv_path.read_text().startswith("# halonmpc-reference v1\n")
    back = read_reference(csv_path)
    np.testing.assert_array_equal(back.samples, nominal_reference.samples)
    np.testing.assert_array_equal(back.thetas, nominal_reference.thetas)
    assert back.dtheta == nominal_reference.dtheta
    assert back.period_steps == nominal_reference.period_steps


def test_natural_reference_has_no_defect(circular_params, nominal_orbit):
    ref = natural_reference(nominal_orbit.initial_state, 0.01, 50, circular_params)
    assert ref.period_steps == 50 and not ref.shifted


def test_family_sweep_refines_smoothly():
    x = (X0, 1.0)
    spreads = []
    for n in (5, 9, 17):
        members = sweep_family(np.linspace(*x, n), MU, Z0_GUESS, YDOT0_GUESS)
        assert all(m.orbit is not None for m in members)
        ic = np.array([m.orbit.initial_state[[2, 4]] for m in members])
        spreads.append(np.max(np.abs(np.diff(ic, axis=0))))
    # neighbouring members move closer as the x0 spacing is halved
    assert spreads[0] > spreads[1] > spreads[2]


def test_family_records_failures_and_continues():
    members = sweep_family([X0, 0.5, 0.99], MU, Z0_GUESS, YDOT0_GUESS, max_iter=8)
    assert members[0].orbit is not None
    assert members[1].orbit is None and members[1].error
    assert members[2].orbit is not None
