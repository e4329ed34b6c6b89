"""
Halo orbit generation by single shooting, natural-parameter family sweeps,
and the periodized reference trajectory tracked by the controller.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .dynamics import SINGULARITY_EPS, ThreeBodyParams, _rhs, as_state
from .integrator import _plant_step, _rk4, _rk4_sens

#: RK4 step used when propagating trajectories for shooting [rad].
SHOOTING_STEP = 2.5e-4

REFERENCE_CSV_VERSION = "halonmpc-reference v1"
REFERENCE_COLUMNS = ["index", "theta", "x", "y", "z", "xdot", "ydot", "zdot"]


class ShootingError(RuntimeError):
    """Differential correction failed to produce a periodic orbit."""


class NoCrossingError(ShootingError):
    """The propagated trajectory never returned to the x-z plane."""


@dataclass(frozen=True)
class PeriodicOrbit:
    initial_state: np.ndarray
    period: float
    mu: float
    crossing_residual: np.ndarray
    iterations: int = 0

    @property
    def x0(self) -> float:
        return float(self.initial_state[0])


@dataclass(frozen=True)
class PlaneCrossing:
    theta: float
    state: np.ndarray
    stm: np.ndarray = field(repr=False)


_ZERO_U = np.zeros(3)


@numba.njit(cache=True)
def _march(theta0, s0, h, max_steps, mu, eps):
    """Step until y changes sign; returns the last state before the change."""
    u = np.zeros(3)
    # departure guard: the first step is always taken
    s, phi, _ = _rk4_sens(theta0, s0, u, h, mu, 0.0, eps)
    for j in range(1, max_steps):
        nxt, fx, _ = _rk4_sens(theta0 + j * h, s, u, h, mu, 0.0, eps)
        if s[1] * nxt[1] <= 0.0:
            return j, s, phi, True
        s = nxt
        phi = fx @ phi
    return max_steps, s, phi, False


def find_plane_crossing(theta0: float, state0, mu: float, step: float = SHOOTING_STEP,
                        span: float = 2.0 * math.pi,
                        eps: float = SINGULARITY_EPS) -> PlaneCrossing:
    """Next crossing of the x-z plane along the uncontrolled circular flow.

    A trajectory that starts on the plane is not reported as crossing at its
    start. The crossing is bracketed on the fixed RK4 grid, narrowed by
    bisection on a partial final step and polished by Newton on ``y`` using
    ``y'`` from the vector field. The returned ``stm`` is the derivative of
    the crossing state w.r.t. ``state0`` at fixed anomaly.
    """
    s0 = as_state(state0)
    max_steps = int(math.ceil(span / step))
    j, s, phi, found = _march(float(theta0), s0, step, max_steps, mu, eps)
    if not found:
        raise NoCrossingError(f"no x-z plane crossing within {span} rad")
    theta_j = theta0 + j * step
    y0 = s[1]
    lo, hi = 0.0, step
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        ym = _rk4(theta_j, s, _ZERO_U, mid, mu, 0.0, eps)[1]
        if ym * y0 > 0.0:
            lo = mid
        else:
            hi = mid
    tau = 0.5 * (lo + hi)
    for _ in range(20):
        cross = _rk4(theta_j, s, _ZERO_U, tau, mu, 0.0, eps)
        if abs(cross[1]) < 1e-12:
            break
        tau -= cross[1] / cross[4]
    cross, fx, _ = _rk4_sens(theta_j, s, _ZERO_U, tau, mu, 0.0, eps)
    if abs(cross[1]) >= 1e-12:
        raise NoCrossingError("crossing refinement did not converge")
    return PlaneCrossing(theta_j + tau, cross, fx @ phi)


def _crossing_residual(x0, z0, ydot0, mu, step, span, eps):
    state = np.array([x0, 0.0, z0, 0.0, ydot0, 0.0])
    crossing = find_plane_crossing(0.0, state, mu, step, span, eps)
    return state, crossing, crossing.state[[3, 5]]


def shoot_halo(x0: float, z0_guess: float, ydot0_guess: float, mu: float,
               tol: float = 1e-10, max_iter: int = 50, step: float = SHOOTING_STEP,
               span: float = 2.0 * math.pi, eps: float = SINGULARITY_EPS) -> PeriodicOrbit:
    """Single-shooting differential correction for a symmetric halo orbit.

    Newton iterates on ``(z0, y'0)`` at fixed ``x0`` until the velocity
    components ``x'`` and ``z'`` vanish at the first return to the x-z plane.
    The correction Jacobian is the crossing-time-corrected state transition
    matrix; a step that increases the residual is halved up to 8 times.
    """
    z0, ydot0 = float(z0_guess), float(ydot0_guess)
    state, crossing, res = _crossing_residual(x0, z0, ydot0, mu, step, span, eps)
    for it in range(max_iter + 1):
        if np.max(np.abs(res)) < tol:
            return PeriodicOrbit(state, 2.0 * crossing.theta, mu, res, it)
        if it == max_iter:
            break
        xf = crossing.state
        fdot = _rhs(0.0, xf, _ZERO_U, mu, 0.0, eps)
        cols = [2, 4]
        dxf = crossing.stm[:, cols] - np.outer(fdot, crossing.stm[1, cols]) / fdot[1]
        jac = dxf[[3, 5], :]
        if not np.all(np.isfinite(jac)) or abs(np.linalg.det(jac)) < 1e-300:
            raise ShootingError("singular correction Jacobian")
        delta = -np.linalg.solve(jac, res)
        norm = np.linalg.norm(res)
        scale = 1.0
        for _ in range(9):
            try:
                trial = _crossing_residual(x0, z0 + scale * delta[0],
                                           ydot0 + scale * delta[1], mu, step, span, eps)
            except ShootingError:
                trial = None
            if trial is not None and np.linalg.norm(trial[2]) < norm:
                break
            scale *= 0.5
        if trial is None:
            raise ShootingError("correction step left the crossing region")
        z0 += scale * delta[0]
        ydot0 += scale * delta[1]
        state, crossing, res = trial
    raise ShootingError(f"shooting did not converge in {max_iter} iterations "
                        f"(residual {np.max(np.abs(res)):.3e})")


@dataclass(frozen=True)
class FamilyMember:
    x0: float
    orbit: PeriodicOrbit | None
    error: str | None = None


def sweep_family(x0_values, mu: float, z0_guess: float, ydot0_guess: float,
                 tol: float = 1e-10, planar_tol: float = 1e-8, **kwargs) -> list[FamilyMember]:
    """Natural-parameter continuation over ``x0``.

    Each converged member seeds the next guess. Failures are recorded and the
    sweep continues from the last converged member. A member whose ``z0``
    collapses below ``planar_tol`` after an out-of-plane predecessor has left
    the halo family for a planar orbit and is recorded as a failure; this is
    the usual symptom of too large a step in ``x0``.
    """
    members = []
    guess = (z0_guess, ydot0_guess)
    for x0 in x0_values:
        try:
            orbit = shoot_halo(float(x0), guess[0], guess[1], mu, tol=tol, **kwargs)
        except (ShootingError, ValueError) as exc:
            members.append(FamilyMember(float(x0), None, str(exc)))
            continue
        if abs(orbit.initial_state[2]) < planar_tol <= abs(guess[0]):
            members.append(FamilyMember(float(x0), None,
                                        "converged to a planar orbit; reduce the x0 step"))
            continue
        members.append(FamilyMember(float(x0), orbit))
        guess = (orbit.initial_state[2], orbit.initial_state[4])
    return members


@dataclass(frozen=True)
class ReferenceOrbit:
    """Reference trajectory on a uniform anomaly grid with wrap-around indexing.

    ``samples`` has ``period_steps + 1`` rows and, once shifted, the last row
    repeats the first.
    """

    dtheta: float
    thetas: np.ndarray
    samples: np.ndarray
    period_steps: int
    shifted: bool
    mu: float
    shift_magnitude: float = 0.0

    def __post_init__(self):
        if self.samples.shape != (self.period_steps + 1, 6):
            raise ValueError("samples must have period_steps + 1 rows")

    @property
    def period(self) -> float:
        return self.period_steps * self.dtheta

    def state(self, k: int) -> np.ndarray:
        return self.samples[k % self.period_steps]

    def window(self, k: int, horizon: int) -> np.ndarray:
        return reference_window(self, k, horizon)

    def to_csv(self, path, sidecar: dict | None = None):
        write_reference(self, path, sidecar)


def periodize(orbit: PeriodicOrbit, dtheta: float, step: float = SHOOTING_STEP,
              shift: bool = True, fit_grid: bool = True) -> ReferenceOrbit:
    """Sample an orbit on a uniform grid of ``n = round(period / dtheta)`` steps
    and close it linearly.

    With ``fit_grid`` the step is stretched to ``period / n`` so that the last
    sample ``Xf`` lands on the period and only integration error separates it
    from ``X0``; the returned ``dtheta`` then differs from the requested one
    by at most ``dtheta / (2 n)``. Without it the requested step is kept and
    ``Xf`` misses ``X0`` by the fractional part of the period. Either way
    sample ``k`` receives ``(k / n) * (X0 - Xf)``.
    """
    if not dtheta > 0.0:
        raise ValueError("dtheta must be positive")
    n = max(1, int(round(orbit.period / dtheta)))
    if fit_grid:
        dtheta = orbit.period / n
    thetas = np.arange(n + 1) * dtheta
    substeps = max(1, int(math.ceil(dtheta / step)))
    samples = np.empty((n + 1, 6))
    samples[0] = orbit.initial_state
    for k in range(n):
        samples[k + 1] = _plant_step(thetas[k], samples[k], _ZERO_U, dtheta, substeps,
                                     orbit.mu, 0.0, SINGULARITY_EPS)
    gap = samples[0] - samples[n]
    if shift:
        samples = samples + np.outer(np.arange(n + 1) / n, gap)
        samples[n] = samples[0]
    return ReferenceOrbit(float(dtheta), thetas, samples, n, shift, orbit.mu,
                          float(np.linalg.norm(gap)))


def reference_window(ref: ReferenceOrbit, k: int, horizon: int) -> np.ndarray:
    """Reference states at indices ``k .. k + horizon`` modulo the period."""
    idx = (k + np.arange(horizon + 1)) % ref.period_steps
    return ref.samples[idx]


def natural_reference(state0, dtheta: float, steps: int, params: ThreeBodyParams,
                      theta0: float = 0.0) -> ReferenceOrbit:
    """Unshifted reference made of the prediction model's own uncontrolled motion.

    Useful when the controller should see zero residual on the reference.
    """
    from .integrator import propagate
    traj = propagate(theta0, state0, np.zeros((steps, 3)), dtheta, params.circular())
    thetas = theta0 + dtheta * np.arange(steps + 1)
    return ReferenceOrbit(float(dtheta), thetas, traj, steps, False, params.mu,
                          float(np.linalg.norm(traj[0] - traj[-1])))


# ---------------------------------------------------------------------------
# file formats


def write_reference(ref: ReferenceOrbit, path, sidecar: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>`` as CSV and ``<path>.json`` (same stem) as metadata."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# {REFERENCE_CSV_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(REFERENCE_COLUMNS)
        for k, (th, row) in enumerate(zip(ref.thetas, ref.samples)):
            writer.writerow([k, repr(float(th)), *(repr(float(v)) for v in row)])
    meta = {
        "mu": ref.mu,
        "dtheta": ref.dtheta,
        "period_steps": ref.period_steps,
        "period": ref.period,
        "shifted": ref.shifted,
        "shift_magnitude": ref.shift_magnitude,
    }
    meta.update(sidecar or {})
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, json_path


def read_reference(path) -> ReferenceOrbit:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    rows = []
    with path.open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != REFERENCE_COLUMNS:
        raise ValueError(f"unexpected reference columns {reader.fieldnames}")
    for row in reader:
        rows.append([float(row[c]) for c in REFERENCE_COLUMNS[1:]])
    data = np.array(rows)
    return ReferenceOrbit(float(meta["dtheta"]), data[:, 0], data[:, 1:],
                          int(meta["period_steps"]), bool(meta["shifted"]),
                          float(meta["mu"]), float(meta.get("shift_magnitude", 0.0)))
