import dataclasses

import numpy as np
import pytest

from halonmpc.dynamics import ThreeBodyParams
from halonmpc.ocp import OcpConfig
from halonmpc.orbits import periodize
from halonmpc.sim import (
    HypercubeSpec, SimConfig, closed_loop_cost, config_echo, monte_carlo, simulate, tdo_sweep,
    write_summary,
)


@pytest.fixture(scope="module")
def base(nominal_reference):
    p = ThreeBodyParams(mu=0.012)
    return SimConfig(params=p, ocp=OcpConfig.table1(p, dtheta=nominal_reference.dtheta),
                     revolutions=0.25, record_timing=False)


@pytest.fixture(scope="module")
def short_run(base, nominal_reference):
    return simulate(base, nominal_reference)


def test_log_shapes_and_reference_alignment(short_run, nominal_reference, base):
    log = short_run
    steps = int(np.ceil(0.25 * nominal_reference.period_steps))
    assert log.steps == steps and log.failure is None
    assert log.state.shape == (steps + 1, 6)
    for k in (0, 7, steps):
        np.testing.assert_array_equal(log.reference[k], nominal_reference.state(k))
    np.testing.assert_allclose(log.theta, np.arange(steps + 1) * base.ocp.dtheta)
    np.testing.assert_allclose(log.t_tu, log.theta)  # circular plant
    assert np.all(np.abs(log.u) <= base.ocp.u_max)
    assert not np.any(log.step_ms)
    assert np.all(np.isfinite(log.kkt[:-1]))


def test_closed_loop_cost_definition(short_run, base):
    log = short_run
    Q, R = base.ocp.Q, base.ocp.R
    expect = sum(e @ Q @ e for e in log.error) + sum(u @ R @ u for u in log.u)
    assert closed_loop_cost(log, Q, R) == pytest.approx(expect, rel=1e-12)


def test_runs_are_reproducible_and_seed_dependent(short_run, base, nominal_reference):
    again = simulate(base, nominal_reference)
    np.testing.assert_array_equal(again.state, short_run.state)
    np.testing.assert_array_equal(again.u, short_run.u)
    other = simulate(dataclasses.replace(base, seed=1), nominal_reference)
    assert not np.array_equal(other.state, short_run.state)
    quiet = simulate(dataclasses.replace(base, tau_kms2=0.0, revolutions=0.05),
                     nominal_reference)
    # without noise only the coarse prediction model's own error is corrected
    assert np.max(quiet.position_error_km) < 1.0
    assert np.max(np.abs(quiet.u_mN)) < 50.0


def test_noise_level_units(base):
    # 1e-10 km/s^2 = 1e-7 m/s^2, scaled by TU^2 / LU
    assert base.noise_std == pytest.approx(1e-7 * 375190.0**2 / 384400e3, rel=1e-12)


def test_grid_mismatch_is_rejected(base, nominal_orbit):
    other = periodize(nominal_orbit, 0.01, fit_grid=False)
    with pytest.raises(ValueError):
        simulate(base, other)


def test_csv_and_summary(tmp_path, short_run, base):
    short_run.to_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "# halonmpc-simlog v1"
    assert len(lines) == short_run.steps + 3
    write_summary(short_run, tmp_path / "summary.json")
    s = short_run.summary(base.ocp.Q, base.ocp.R)
    assert s["steps"] == short_run.steps
    assert s["max_control_mN"] <= 2000.0 + 1e-9
    echo = config_echo(base)
    assert echo["ell"] == 3 and echo["record_timing"] is False


def test_hypercube_draws(base):
    spec = HypercubeSpec(center=None, dr_max_km=500.0, dv_max_kms=0.01, samples=50)
    center = np.zeros(6)
    pts = spec.draw(center, base.params, seed=4)
    assert pts.shape == (50, 6)
    assert np.all(np.abs(pts[:, :3]) * 384400.0 <= 500.0 + 1e-9)
    assert np.all(np.abs(pts[:, 3:]) * 384400.0 / 375190.0 <= 0.01 + 1e-12)
    np.testing.assert_array_equal(pts, spec.draw(center, base.params, seed=4))
    assert HypercubeSpec(samples=0).draw(center, base.params, 0).shape == (0, 6)
    with pytest.raises(ValueError):
        HypercubeSpec(samples=-1)


def test_monte_carlo_common_random_numbers(base, nominal_reference, short_run):
    # a degenerate box reproduces the nominal run exactly
    runs = monte_carlo(HypercubeSpec(dr_max_km=0.0, dv_max_kms=0.0, samples=2), base,
                       nominal_reference)
    assert len(runs) == 2
    for r in runs:
        np.testing.assert_array_equal(r.log.state, short_run.state)
        assert r.converged
    assert monte_carlo(HypercubeSpec(samples=0), base, nominal_reference) == []


def test_tdo_sweep_records_points(base, nominal_reference):
    cfg = dataclasses.replace(base, revolutions=0.05)
    pts = tdo_sweep([0, 1, 2], cfg, nominal_reference)
    assert [p.ell for p in pts] == [0, 1, 2]
    assert pts[0].error and np.isnan(pts[0].J)
    assert all(np.isfinite(p.J) and p.error is None for p in pts[1:])


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(revolutions=0.0)
    with pytest.raises(ValueError):
        SimConfig(ell=0)
    with pytest.raises(ValueError):
        SimConfig(tau_kms2=-1.0)
