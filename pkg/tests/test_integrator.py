import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from halonmpc.dynamics import ThreeBodyParams, er3bp_rhs
from halonmpc.integrator import (
    linearize_horizon, propagate, propagate_plant, rk4_step, rk4_step_with_sensitivities,
)

from conftest import MU, random_states


def central_differences(theta, s, u, h, p, eps=1e-6):
    fx = np.empty((6, 6))
    fu = np.empty((6, 3))
    for j in range(6):
        d = np.zeros(6)
        d[j] = eps
        fx[:, j] = (rk4_step(theta, s + d, u, h, p) - rk4_step(theta, s - d, u, h, p)) / (2 * eps)
    for j in range(3):
        d = np.zeros(3)
        d[j] = eps
        fu[:, j] = (rk4_step(theta, s, u + d, h, p) - rk4_step(theta, s, u - d, h, p)) / (2 * eps)
    return fx, fu


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.2), st.floats(0.0, 2 * np.pi), st.floats(1e-3, 5e-2),
       st.integers(0, 2**31 - 1))
def test_sensitivities_match_finite_differences(e, theta, h, seed):
    rng = np.random.default_rng(seed)
    s = random_states(rng, 1)[0]
    u = rng.uniform(-0.1, 0.1, 3)
    p = ThreeBodyParams(mu=MU, e=e)
    res = rk4_step_with_sensitivities(theta, s, u, h, p)
    fx, fu = central_differences(theta, s, u, h, p)
    np.testing.assert_allclose(res.next_state, rk4_step(theta, s, u, h, p), rtol=0, atol=1e-15)
    assert np.linalg.norm(res.state_sensitivity - fx) / np.linalg.norm(fx) < 1e-6
    assert np.linalg.norm(res.control_sensitivity - fu) / np.linalg.norm(fu) < 1e-6


def test_rk4_is_fourth_order():
    p = ThreeBodyParams(mu=MU, e=0.055)
    s0 = np.array([0.9878, 0.0, 0.0275, 0.0, 0.897, 0.0])
    u = np.array([1e-3, -2e-3, 5e-4])
    span = 0.5
    exact = solve_ivp(lambda t, y: er3bp_rhs(t, y, u, p), (0.0, span), s0,
                      method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]
    errs = []
    for n in (400, 800):
        traj = propagate(0.0, s0, np.tile(u, (n, 1)), span / n, p)
        errs.append(np.linalg.norm(traj[-1] - exact))
    assert errs[1] < 1e-8
    assert 12.0 < errs[0] / errs[1] < 20.0


def test_zero_step_is_identity():
    p = ThreeBodyParams(mu=MU)
    s = np.array([0.9, 0.1, 0.05, 0.01, -0.2, 0.3])
    res = rk4_step_with_sensitivities(0.3, s, np.ones(3), 0.0, p)
    np.testing.assert_array_equal(res.next_state, s)
    np.testing.assert_array_equal(res.state_sensitivity, np.eye(6))
    np.testing.assert_array_equal(res.control_sensitivity, np.zeros((6, 3)))
    with pytest.raises(ValueError):
        rk4_step(0.0, s, np.zeros(3), -0.1, p)


def test_propagate_and_linearize_agree_with_single_steps(rng):
    p = ThreeBodyParams(mu=MU, e=0.1)
    s0 = np.array([0.9878, 0.0, 0.0275, 0.0, 0.897, 0.0])
    controls = rng.uniform(-0.05, 0.05, (8, 3))
    h, th0 = 0.01, 0.7
    traj = propagate(th0, s0, controls, h, p)
    nxt, jx, ju = linearize_horizon(th0, traj[:-1], controls, h, p)
    for k in range(8):
        step = rk4_step_with_sensitivities(th0 + k * h, traj[k], controls[k], h, p)
        np.testing.assert_allclose(traj[k + 1], step.next_state, rtol=0, atol=1e-15)
        np.testing.assert_allclose(nxt[k], step.next_state, rtol=0, atol=1e-15)
        np.testing.assert_allclose(jx[k], step.state_sensitivity, rtol=0, atol=1e-13)
        np.testing.assert_allclose(ju[k], step.control_sensitivity, rtol=0, atol=1e-13)


def test_plant_substeps_and_noise():
    p = ThreeBodyParams(mu=MU, e=0.055)
    s0 = np.array([0.9878, 0.0, 0.0275, 0.0, 0.897, 0.0])
    u = np.array([0.01, 0.0, -0.01])
    w = np.array([1e-4, 2e-4, -3e-4])
    h = 0.01
    manual = s0
    for j in range(10):
        manual = rk4_step(j * h / 10, manual, u + w, h / 10, p)
    np.testing.assert_allclose(propagate_plant(0.0, s0, u, h, p, 10, w), manual,
                               rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        propagate_plant(0.0, s0, u, h, p, 0)
