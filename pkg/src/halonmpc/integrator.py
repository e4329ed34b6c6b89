"""
Fixed-step RK4 discretization of the prediction model and its exact
discrete sensitivities, plus the higher-accuracy plant propagation used in
closed-loop simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .dynamics import (SINGULARITY_EPS, ThreeBodyParams, _rhs, _state_jacobian,
                       as_control, as_state)

#: Classic RK4 tableau: stage offsets, weights and nodes.
RK_A = np.array([0.0, 0.5, 0.5, 1.0])
RK_B = np.array([1.0, 2.0, 2.0, 1.0])
RK_C = np.array([0.0, 0.5, 0.5, 1.0])


@dataclass(frozen=True)
class DiscreteStepResult:
    next_state: np.ndarray
    state_sensitivity: np.ndarray
    control_sensitivity: np.ndarray


@numba.njit(cache=True)
def _rk4(theta, s, u, h, mu, e, eps):
    k = np.zeros(6)
    acc = np.zeros(6)
    for i in range(4):
        k = _rhs(theta + RK_C[i] * h, s + RK_A[i] * h * k, u, mu, e, eps)
        acc += RK_B[i] * k
    return s + (h / 6.0) * acc


@numba.njit(cache=True)
def _rk4_sens(theta, s, u, h, mu, e, eps):
    k = np.zeros(6)
    a = np.zeros((6, 6))
    b = np.zeros((6, 3))
    eye = np.eye(6)
    acc_k = np.zeros(6)
    acc_a = np.zeros((6, 6))
    acc_b = np.zeros((6, 3))
    for i in range(4):
        th = theta + RK_C[i] * h
        xi = s + RK_A[i] * h * k
        k = _rhs(th, xi, u, mu, e, eps)
        jac = _state_jacobian(th, xi, mu, e, eps)
        a = jac @ (eye + RK_A[i] * h * a)
        b = jac @ (RK_A[i] * h * b)
        # control Jacobian of the vector field is [0; I]
        for j in range(3):
            b[3 + j, j] += 1.0
        acc_k += RK_B[i] * k
        acc_a += RK_B[i] * a
        acc_b += RK_B[i] * b
    w = h / 6.0
    return s + w * acc_k, eye + w * acc_a, w * acc_b


@numba.njit(cache=True)
def _propagate(theta0, s0, controls, h, mu, e, eps):
    n = controls.shape[0]
    out = np.empty((n + 1, 6))
    out[0] = s0
    for k in range(n):
        out[k + 1] = _rk4(theta0 + k * h, out[k], controls[k], h, mu, e, eps)
    return out


@numba.njit(cache=True)
def _linearize_horizon(theta0, states, controls, h, mu, e, eps):
    n = controls.shape[0]
    nxt = np.empty((n, 6))
    jx = np.empty((n, 6, 6))
    ju = np.empty((n, 6, 3))
    for k in range(n):
        f, fx, fu = _rk4_sens(theta0 + k * h, states[k], controls[k], h, mu, e, eps)
        nxt[k] = f
        jx[k] = fx
        ju[k] = fu
    return nxt, jx, ju


@numba.njit(cache=True)
def _plant_step(theta, s, u, h, substeps, mu, e, eps):
    dt = h / substeps
    for j in range(substeps):
        s = _rk4(theta + j * dt, s, u, dt, mu, e, eps)
    return s


def _check_step(dtheta):
    if not dtheta >= 0.0:
        raise ValueError(f"dtheta must be non-negative, got {dtheta}")


def rk4_step(theta: float, state, u, dtheta: float, params: ThreeBodyParams,
             eps: float = SINGULARITY_EPS) -> np.ndarray:
    """One RK4 step of the controlled vector field with the control held constant.

    The eccentricity is taken from ``params``; pass ``params.circular()`` for
    the prediction model.
    """
    _check_step(dtheta)
    return _rk4(float(theta), as_state(state), as_control(u), float(dtheta),
                params.mu, params.e, eps)


def rk4_step_with_sensitivities(theta: float, state, u, dtheta: float,
                                params: ThreeBodyParams,
                                eps: float = SINGULARITY_EPS) -> DiscreteStepResult:
    """RK4 step together with its exact Jacobians w.r.t. state and control.

    The stage derivatives are chained forward alongside the stages, so the
    returned matrices are the derivatives of the discrete map itself rather
    than of the continuous flow.
    """
    _check_step(dtheta)
    f, fx, fu = _rk4_sens(float(theta), as_state(state), as_control(u), float(dtheta),
                          params.mu, params.e, eps)
    return DiscreteStepResult(f, fx, fu)


def propagate(theta0: float, state0, control_sequence, dtheta: float,
              params: ThreeBodyParams, eps: float = SINGULARITY_EPS) -> np.ndarray:
    """Roll the RK4 map forward; returns an ``(n + 1, 6)`` trajectory."""
    _check_step(dtheta)
    controls = np.asarray(control_sequence, dtype=float).reshape(-1, 3)
    return _propagate(float(theta0), as_state(state0), controls, float(dtheta),
                      params.mu, params.e, eps)


def linearize_horizon(theta0: float, states, controls, dtheta: float,
                      params: ThreeBodyParams, eps: float = SINGULARITY_EPS):
    """Stage-wise RK4 maps and sensitivities along a horizon.

    Returns ``(next_states, A, B)`` with shapes ``(N, 6)``, ``(N, 6, 6)`` and
    ``(N, 6, 3)``, evaluated at ``(theta0 + i * dtheta, states[i], controls[i])``.
    """
    return _linearize_horizon(float(theta0), np.ascontiguousarray(states, dtype=float),
                              np.ascontiguousarray(controls, dtype=float),
                              float(dtheta), params.mu, params.e, eps)


def propagate_plant(theta0: float, state0, u, dtheta: float, params: ThreeBodyParams,
                    substeps: int = 10, noise=None,
                    eps: float = SINGULARITY_EPS) -> np.ndarray:
    """Advance the plant over one controller interval.

    Uses the full elliptic model with ``params.e`` and ``substeps`` internal
    RK4 steps. ``noise`` is a constant acceleration added to ``u`` over the
    interval.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    _check_step(dtheta)
    accel = as_control(u)
    if noise is not None:
        accel = accel + as_control(noise)
    return _plant_step(float(theta0), as_state(state0), accel, float(dtheta),
                       int(substeps), params.mu, params.e, eps)
