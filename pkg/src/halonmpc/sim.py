"""
Closed-loop simulation of the controller against the elliptic plant,
hypercube Monte Carlo studies and iteration-cap sweeps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import (SingularityError, ThreeBodyParams, accel_to_nondim, km_to_lu,
                       kms_to_nondim, lu_to_km, thrust_nondim_to_mN, time_from_anomaly)
from .integrator import propagate_plant
from .nmpc import QpFailure, control_step, initialize
from .ocp import OcpConfig
from .orbits import ReferenceOrbit
from .qpsolver import QpSolverConfig

SIMLOG_CSV_VERSION = "halonmpc-simlog v1"
SIMLOG_COLUMNS = (["k", "theta", "t_tu", "t_hours", "x", "y", "z", "xdot", "ydot", "zdot"]
                  + ["ref_" + c for c in ("x", "y", "z", "xdot", "ydot", "zdot")]
                  + ["err_norm", "ux_mN", "uy_mN", "uz_mN", "kkt_residual", "step_ms"])

#: Terminal position error below which a Monte Carlo run counts as converged [km].
CONVERGED_KM = 10.0


@dataclass(frozen=True)
class SimConfig:
    params: ThreeBodyParams = field(default_factory=ThreeBodyParams)
    ocp: OcpConfig = field(default_factory=OcpConfig.table1)
    ell: int = 3
    qp: QpSolverConfig = field(default_factory=QpSolverConfig)
    tau_kms2: float = 1e-10
    revolutions: float = 1.0
    seed: int = 0
    substeps: int = 10
    initial_state: tuple | None = None
    shift_warmstart: bool = False
    record_timing: bool = True

    def __post_init__(self):
        if not self.revolutions > 0.0:
            raise ValueError("revolutions must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        if not self.tau_kms2 >= 0.0:
            raise ValueError("process noise level must be non-negative")
        if self.ell < 1:
            raise ValueError("ell must be at least 1")

    @property
    def noise_std(self) -> float:
        """Process-noise standard deviation in nondimensional acceleration."""
        return float(accel_to_nondim(self.tau_kms2 * 1e3, self.params))


@dataclass
class SimLog:
    k: np.ndarray
    theta: np.ndarray
    t_tu: np.ndarray
    state: np.ndarray
    reference: np.ndarray
    u: np.ndarray
    kkt: np.ndarray
    step_ms: np.ndarray
    params: ThreeBodyParams
    u_max: float
    failure: str | None = None
    config_echo: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.k) - 1

    @property
    def error(self) -> np.ndarray:
        return self.state - self.reference

    @property
    def position_error_km(self) -> np.ndarray:
        return lu_to_km(np.linalg.norm(self.error[:, :3], axis=1), self.params)

    @property
    def u_mN(self) -> np.ndarray:
        return thrust_nondim_to_mN(self.u, self.params)

    @property
    def t_hours(self) -> np.ndarray:
        return self.t_tu * self.params.time_unit_s / 3600.0

    def saturation_count(self, rtol: float = 1e-6) -> int:
        return int(np.sum(np.max(np.abs(self.u[:-1]), axis=1) >= self.u_max * (1.0 - rtol)))

    def summary(self, Q, R) -> dict:
        u_inf = np.max(np.abs(self.u_mN), axis=1)
        return {
            "J": closed_loop_cost(self, Q, R),
            "steps": self.steps,
            "max_error_norm": float(np.max(np.linalg.norm(self.error, axis=1))),
            "max_position_error_km": float(np.max(self.position_error_km)),
            "terminal_position_error_km": float(self.position_error_km[-1]),
            "max_control_mN": float(np.max(u_inf)),
            "saturation_count": self.saturation_count(),
            "mean_step_ms": float(np.mean(self.step_ms[:-1])) if self.steps else 0.0,
            "max_kkt_residual": float(np.nanmax(self.kkt)) if self.steps else 0.0,
            "failure": self.failure,
        }

    def to_csv(self, path):
        u_mn = self.u_mN
        err = np.linalg.norm(self.error, axis=1)
        with open(path, "w", newline="") as fh:
            fh.write(f"# {SIMLOG_CSV_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(SIMLOG_COLUMNS)
            for j in range(len(self.k)):
                writer.writerow([int(self.k[j])] + [repr(float(x)) for x in (
                    self.theta[j], self.t_tu[j], self.t_hours[j], *self.state[j],
                    *self.reference[j], err[j], *u_mn[j], self.kkt[j], self.step_ms[j])])


def simulate(config: SimConfig, reference: ReferenceOrbit) -> SimLog:
    """Closed loop: full-state feedback from the plant, noisy elliptic plant.

    Runs ``ceil(revolutions * period_steps)`` controller intervals starting at
    ``theta = 0`` on reference index 0. The noise sequence depends only on
    ``config.seed``.
    """
    ocp = config.ocp
    if not math.isclose(reference.dtheta, ocp.dtheta, rel_tol=1e-12):
        raise ValueError("reference grid step differs from the controller step")
    steps = int(math.ceil(config.revolutions * reference.period_steps - 1e-9))
    rng = np.random.default_rng(config.seed)
    noise = rng.normal(0.0, 1.0, size=(steps, 3)) * config.noise_std

    xi = (np.array(config.initial_state, dtype=float) if config.initial_state is not None
          else reference.samples[0].copy())
    dtheta = ocp.dtheta
    n = steps + 1
    states = np.zeros((n, 6))
    refs = np.zeros((n, 6))
    us = np.zeros((n, 3))
    kkt = np.full(n, np.nan)
    step_ms = np.zeros(n)
    thetas = dtheta * np.arange(n)
    states[0] = xi
    failure = None
    done = 0
    controller = initialize(xi, 0.0, reference, ocp, config.ell, config.qp,
                            config.shift_warmstart)
    for k in range(steps):
        refs[k] = reference.state(k)
        try:
            u, diag, controller = control_step(controller, xi, thetas[k], reference)
            xi = propagate_plant(thetas[k], xi, u, dtheta, config.params, config.substeps,
                                 noise[k])
        except (SingularityError, QpFailure) as exc:
            failure = f"step {k}: {exc}"
            break
        us[k] = u
        kkt[k] = diag.kkt_norm
        if config.record_timing:
            step_ms[k] = diag.wall_time * 1e3
        states[k + 1] = xi
        done = k + 1
    refs[done] = reference.state(done)
    keep = slice(0, done + 1)
    theta = thetas[keep]
    t_tu = np.array([time_from_anomaly(0.0, th, config.params.e) for th in theta])
    return SimLog(np.arange(done + 1), theta, t_tu, states[keep], refs[keep], us[keep],
                  kkt[keep], step_ms[keep], config.params, ocp.u_max, failure,
                  config_echo(config))


def closed_loop_cost(log: SimLog, Q, R) -> float:
    """Sum of weighted tracking error and control effort over all logged instants."""
    err = log.error
    return float(np.einsum("ki,ij,kj->", err, Q, err)
                 + np.einsum("ki,ij,kj->", log.u, R, log.u))


# ---------------------------------------------------------------------------
# batch studies


@dataclass(frozen=True)
class HypercubeSpec:
    """Uniform box of initial-state offsets around ``center``."""

    center: tuple | None = None
    dr_max_km: float = 500.0
    dv_max_kms: float = 0.01
    samples: int = 10

    def __post_init__(self):
        if not (self.dr_max_km >= 0.0 and self.dv_max_kms >= 0.0):
            raise ValueError("hypercube half-widths must be non-negative")
        if self.samples < 0:
            raise ValueError("sample count must be non-negative")

    def draw(self, center, params: ThreeBodyParams, seed: int) -> np.ndarray:
        """Sampled initial states, shape ``(samples, 6)``."""
        half = np.concatenate([np.full(3, km_to_lu(self.dr_max_km, params)),
                               np.full(3, kms_to_nondim(self.dv_max_kms, params))])
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        offsets = rng.uniform(-1.0, 1.0, size=(self.samples, 6)) * half
        return np.asarray(center, dtype=float) + offsets


@dataclass
class MonteCarloRun:
    index: int
    initial_state: np.ndarray
    log: SimLog | None
    converged: bool
    J: float
    error: str | None = None


def monte_carlo(spec: HypercubeSpec, base: SimConfig, reference: ReferenceOrbit,
                converged_km: float = CONVERGED_KM) -> list[MonteCarloRun]:
    """One closed-loop run per hypercube sample.

    Every run replays the noise sequence of ``base.seed``; the offsets come
    from a separate stream derived from the same seed. ``center`` defaults to
    the reference's initial state.
    """
    center = spec.center if spec.center is not None else reference.samples[0]
    starts = spec.draw(center, base.params, base.seed)
    runs = []
    for i, x0 in enumerate(starts):
        try:
            log = simulate(replace(base, initial_state=tuple(x0)), reference)
        except Exception as exc:  # recorded, batch continues
            runs.append(MonteCarloRun(i, x0, None, False, float("nan"), str(exc)))
            continue
        ok = log.failure is None and log.position_error_km[-1] < converged_km
        runs.append(MonteCarloRun(i, x0, log, bool(ok),
                                  closed_loop_cost(log, base.ocp.Q, base.ocp.R), log.failure))
    return runs


@dataclass
class SweepPoint:
    ell: int
    J: float
    mean_step_ms: float
    error: str | None = None
    log: SimLog | None = field(default=None, repr=False)


def tdo_sweep(ell_values, base: SimConfig, reference: ReferenceOrbit) -> list[SweepPoint]:
    """Closed-loop cost per SQP iteration cap under common random numbers."""
    out = []
    for ell in ell_values:
        ell = int(ell)
        if ell < 1:
            out.append(SweepPoint(ell, float("nan"), float("nan"), "ell must be at least 1"))
            continue
        try:
            log = simulate(replace(base, ell=ell), reference)
        except Exception as exc:
            out.append(SweepPoint(ell, float("nan"), float("nan"), str(exc)))
            continue
        out.append(SweepPoint(ell, closed_loop_cost(log, base.ocp.Q, base.ocp.R),
                              float(np.mean(log.step_ms[:-1])), log.failure, log))
    return out


# ---------------------------------------------------------------------------
# config echo


def config_echo(config: SimConfig) -> dict:
    """JSON-ready description of a simulation config, in nondimensional units."""
    d = {
        "params": asdict(config.params),
        "ocp": {"N": config.ocp.N, "Q": config.ocp.Q.tolist(), "R": config.ocp.R.tolist(),
                "u_max": config.ocp.u_max, "dtheta": config.ocp.dtheta, "mu": config.ocp.mu},
        "ell": config.ell,
        "qp": asdict(config.qp),
        "tau_kms2": config.tau_kms2,
        "revolutions": config.revolutions,
        "seed": config.seed,
        "substeps": config.substeps,
        "initial_state": list(config.initial_state) if config.initial_state is not None else None,
        "shift_warmstart": config.shift_warmstart,
        "record_timing": config.record_timing,
    }
    return d


def write_summary(log: SimLog, path, extra: dict | None = None):
    summary = log.summary(np.array(log.config_echo["ocp"]["Q"]),
                          np.array(log.config_echo["ocp"]["R"]))
    summary["config"] = log.config_echo
    summary.update(extra or {})
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
