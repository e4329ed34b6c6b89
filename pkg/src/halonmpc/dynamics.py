"""
Restricted three-body dynamics in the rotating/pulsating frame.

States are 6-vectors ``(x, y, z, x', y', z')`` in nondimensional length units,
with primes denoting derivatives with respect to the true anomaly of the
primaries. The primary sits at ``(-mu, 0, 0)`` and the secondary at
``(1 - mu, 0, 0)``. At zero eccentricity the true anomaly equals time and the
elliptic problem collapses to the circular one.

The hot kernels are compiled with numba; the public functions wrap them with
input validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy import integrate

#: Earth-Moon distance [km] used as the length unit.
LENGTH_UNIT_KM = 384_400.0
#: Inverse Earth-Moon mean motion [s] used as the time unit.
TIME_UNIT_S = 375_190.0
#: Minimum admissible distance to either primary [LU].
SINGULARITY_EPS = 1e-12


class SingularityError(ValueError):
    """Raised when a state coincides with one of the primaries."""


@dataclass(frozen=True)
class ThreeBodyParams:
    """Physical constants of the restricted three-body model.

    Parameters
    ----------
    mu : float
        Mass ratio of the secondary, ``0 < mu < 0.5``.
    e : float
        Eccentricity of the primaries' orbit, ``0 <= e < 1``.
    length_unit_km, time_unit_s : float
        Dimensional scales of one LU and one TU.
    mass_kg : float
        Spacecraft mass, used for thrust/acceleration conversions.
    """

    mu: float = 0.012
    e: float = 0.0
    length_unit_km: float = LENGTH_UNIT_KM
    time_unit_s: float = TIME_UNIT_S
    mass_kg: float = 10_000.0

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mu must lie in (0, 0.5), got {self.mu}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity must lie in [0, 1), got {self.e}")
        for name in ("length_unit_km", "time_unit_s", "mass_kg"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    def circular(self) -> "ThreeBodyParams":
        """Same constants with zero eccentricity (the prediction model)."""
        return replace(self, e=0.0)


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _distances(x, y, z, mu, eps):
    r1 = math.sqrt((x + mu) ** 2 + y * y + z * z)
    r2 = math.sqrt((x - 1.0 + mu) ** 2 + y * y + z * z)
    if r1 < eps or r2 < eps:
        raise SingularityError("state coincides with a primary")
    return r1, r2


@numba.njit(cache=True)
def _grad_u(x, y, z, mu, eps):
    r1, r2 = _distances(x, y, z, mu, eps)
    c1 = (1.0 - mu) / r1**3
    c2 = mu / r2**3
    ux = x - c1 * (x + mu) - c2 * (x - 1.0 + mu)
    uy = y - c1 * y - c2 * y
    uz = -c1 * z - c2 * z
    return ux, uy, uz


@numba.njit(cache=True)
def _hess_u(x, y, z, mu, eps):
    r1, r2 = _distances(x, y, z, mu, eps)
    c1 = (1.0 - mu) / r1**3
    c2 = mu / r2**3
    d1 = 3.0 * (1.0 - mu) / r1**5
    d2 = 3.0 * mu / r2**5
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    h = np.empty((3, 3))
    h[0, 0] = 1.0 - c1 - c2 + d1 * dx1 * dx1 + d2 * dx2 * dx2
    h[1, 1] = 1.0 - c1 - c2 + (d1 + d2) * y * y
    h[2, 2] = -c1 - c2 + (d1 + d2) * z * z
    h[0, 1] = h[1, 0] = d1 * dx1 * y + d2 * dx2 * y
    h[0, 2] = h[2, 0] = d1 * dx1 * z + d2 * dx2 * z
    h[1, 2] = h[2, 1] = (d1 + d2) * y * z
    return h


@numba.njit(cache=True)
def _rhs(theta, s, u, mu, e, eps):
    rho = 1.0 + e * math.cos(theta)
    ux, uy, uz = _grad_u(s[0], s[1], s[2], mu, eps)
    out = np.empty(6)
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = 2.0 * s[4] + ux / rho + u[0]
    out[4] = -2.0 * s[3] + uy / rho + u[1]
    out[5] = -s[2] + (s[2] + uz) / rho + u[2]
    return out


@numba.njit(cache=True)
def _state_jacobian(theta, s, mu, e, eps):
    rho = 1.0 + e * math.cos(theta)
    h = _hess_u(s[0], s[1], s[2], mu, eps)
    jac = np.zeros((6, 6))
    jac[0, 3] = 1.0
    jac[1, 4] = 1.0
    jac[2, 5] = 1.0
    for i in range(3):
        for j in range(3):
            jac[3 + i, j] = h[i, j] / rho
    jac[5, 2] += 1.0 / rho - 1.0
    jac[3, 4] = 2.0
    jac[4, 3] = -2.0
    return jac


# ---------------------------------------------------------------------------
# public API


def _position(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise ValueError(f"position must be a 3-vector, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("position has non-finite components")
    return r


def as_state(state) -> np.ndarray:
    """Validate and return a state as a float array of shape ``(6,)``."""
    s = np.asarray(state, dtype=float)
    if s.shape != (6,):
        raise ValueError(f"state must be a 6-vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("state has non-finite components")
    return s


def as_control(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise ValueError(f"control must be a 3-vector, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("control has non-finite components")
    return u


def pseudo_potential(r, mu: float, eps: float = SINGULARITY_EPS) -> float:
    """Rotating-frame pseudo-potential ``U(x, y, z)``."""
    x, y, z = _position(r)
    r1, r2 = _distances(x, y, z, mu, eps)
    return 0.5 * (x * x + y * y) + (1.0 - mu) / r1 + mu / r2


def pseudo_potential_gradient(r, mu: float, eps: float = SINGULARITY_EPS) -> np.ndarray:
    x, y, z = _position(r)
    return np.array(_grad_u(x, y, z, mu, eps))


def pseudo_potential_hessian(r, mu: float, eps: float = SINGULARITY_EPS) -> np.ndarray:
    x, y, z = _position(r)
    return _hess_u(x, y, z, mu, eps)


def er3bp_rhs(theta: float, state, u, params: ThreeBodyParams,
              eps: float = SINGULARITY_EPS) -> np.ndarray:
    """Anomaly derivative of the state under the elliptic model.

    Returns ``(r', v')`` with ``v' = A21 r + A22 v + (grad U + z e_z) / (1 + e cos theta) + u``,
    where ``A21 = diag(0, 0, -1)`` and ``A22`` is the Coriolis coupling.
    """
    return _rhs(float(theta), as_state(state), as_control(u), params.mu, params.e, eps)


def cr3bp_rhs(state, u, mu: float, eps: float = SINGULARITY_EPS) -> np.ndarray:
    """Circular-problem vector field, written out independently of ``er3bp_rhs``."""
    x, y, z, vx, vy, vz = as_state(state)
    u = as_control(u)
    gx, gy, gz = pseudo_potential_gradient((x, y, z), mu, eps)
    return np.array([vx, vy, vz,
                     2.0 * vy + gx + u[0],
                     -2.0 * vx + gy + u[1],
                     gz + u[2]])


def er3bp_jacobians(theta: float, state, u, params: ThreeBodyParams,
                    eps: float = SINGULARITY_EPS) -> tuple[np.ndarray, np.ndarray]:
    """State (6x6) and control (6x3) Jacobians of ``er3bp_rhs``."""
    as_control(u)
    jac = _state_jacobian(float(theta), as_state(state), params.mu, params.e, eps)
    return jac, control_jacobian()


def control_jacobian() -> np.ndarray:
    return np.vstack([np.zeros((3, 3)), np.eye(3)])


def jacobi_energy(state, mu: float) -> float:
    """``0.5 |v|^2 - U(r)``, conserved by the uncontrolled circular flow."""
    s = as_state(state)
    return 0.5 * float(s[3:] @ s[3:]) - pseudo_potential(s[:3], mu)


def time_from_anomaly(theta0: float, theta1: float, e: float) -> float:
    """Elapsed nondimensional time between two true anomalies.

    Integrates ``dt/dtheta = (1 + e cos theta)^-2`` by adaptive quadrature.
    """
    if theta1 < theta0:
        raise ValueError("theta1 must not precede theta0")
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity must lie in [0, 1), got {e}")
    if e == 0.0:
        return float(theta1 - theta0)
    span = theta1 - theta0
    value, _ = integrate.quad(lambda th: 1.0 / (1.0 + e * math.cos(th)) ** 2,
                              theta0, theta1, epsabs=1e-12, epsrel=1e-12,
                              limit=max(50, int(20 * span) + 50))
    return float(value)


def _collinear_dudx(x, mu):
    return _grad_u(x, 0.0, 0.0, mu, SINGULARITY_EPS)[0]


def _collinear_root(lo: float, hi: float, mu: float) -> float:
    flo = _collinear_dudx(lo, mu)
    fhi = _collinear_dudx(hi, mu)
    if flo * fhi > 0.0:
        raise ValueError(f"no collinear equilibrium bracketed in [{lo}, {hi}] for mu={mu}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid = _collinear_dudx(mid, mu)
        if fmid == 0.0 or hi - lo < 1e-15:
            break
        if flo * fmid < 0.0:
            hi = mid
        else:
            lo, flo = mid, fmid
    x = 0.5 * (lo + hi)
    for _ in range(5):
        fx = _collinear_dudx(x, mu)
        if abs(fx) < 1e-14:
            break
        x -= fx / _hess_u(x, 0.0, 0.0, mu, SINGULARITY_EPS)[0, 0]
    if abs(_collinear_dudx(x, mu)) >= 1e-12:
        raise ValueError(f"collinear point did not converge for mu={mu}")
    return x


def lagrange_points(mu: float) -> np.ndarray:
    """Positions of L1..L5 as a ``(5, 3)`` array."""
    if not 0.0 < mu < 0.5:
        raise ValueError(f"mu must lie in (0, 0.5), got {mu}")
    gap = 1e-9
    l1 = _collinear_root(-mu + gap, 1.0 - mu - gap, mu)
    l2 = _collinear_root(1.0 - mu + gap, 2.0, mu)
    l3 = _collinear_root(-2.0, -mu - gap, mu)
    h = math.sqrt(3.0) / 2.0
    return np.array([[l1, 0.0, 0.0],
                     [l2, 0.0, 0.0],
                     [l3, 0.0, 0.0],
                     [0.5 - mu, h, 0.0],
                     [0.5 - mu, -h, 0.0]])


# ---------------------------------------------------------------------------
# unit conversions


def accel_scale(params: ThreeBodyParams) -> float:
    """Nondimensional acceleration per 1 m/s^2."""
    return params.time_unit_s**2 / (params.length_unit_km * 1e3)


def accel_to_nondim(a_si, params: ThreeBodyParams):
    return np.asarray(a_si, dtype=float) * accel_scale(params)


def accel_from_nondim(a, params: ThreeBodyParams):
    return np.asarray(a, dtype=float) / accel_scale(params)


def thrust_mN_to_nondim(thrust_mN, params: ThreeBodyParams):
    return accel_to_nondim(np.asarray(thrust_mN, dtype=float) * 1e-3 / params.mass_kg, params)


def thrust_nondim_to_mN(u, params: ThreeBodyParams):
    return accel_from_nondim(u, params) * params.mass_kg * 1e3


def km_to_lu(d_km, params: ThreeBodyParams):
    return np.asarray(d_km, dtype=float) / params.length_unit_km


def lu_to_km(d, params: ThreeBodyParams):
    return np.asarray(d, dtype=float) * params.length_unit_km


def kms_to_nondim(v_kms, params: ThreeBodyParams):
    return np.asarray(v_kms, dtype=float) * params.time_unit_s / params.length_unit_km
