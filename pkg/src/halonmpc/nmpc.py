"""
Time-distributed SQP controller.

At every sampling instant a fixed number ``ell`` of SQP iterations is run,
starting from the primal-dual iterate left over from the previous instant.
The first planned control of the final iterate is applied.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .integrator import propagate, rk4_step
from .ocp import OcpConfig, PrimalDualPoint, kkt_components, linearize, split_w, stack_w
from .orbits import ReferenceOrbit, reference_window
from .qpsolver import QpSolution, QpSolverConfig, QpStatus, solve_qp


class QpFailure(RuntimeError):
    """A QP subproblem could not be solved numerically."""


@dataclass(frozen=True)
class ControllerState:
    z: PrimalDualPoint
    k: int
    ell: int
    config: OcpConfig
    qp_config: QpSolverConfig = field(default_factory=QpSolverConfig)
    shift_warmstart: bool = False

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be at least 1")
        c = self.config
        if (self.z.w.shape != (c.n_primal,) or self.z.lam.shape != (c.n_eq,)
                or self.z.v.shape != (c.n_ineq,)):
            raise ValueError("primal-dual point does not match the OCP dimensions")


@dataclass(frozen=True)
class ControlDiagnostics:
    u: np.ndarray
    kkt_norm: float
    qp_status: tuple[QpStatus, ...]
    qp_iterations: tuple[tuple[int, int], ...]
    wall_time: float


def _sqp_step(z: PrimalDualPoint, xi_k, theta_k, window, config: OcpConfig,
              qp_config: QpSolverConfig) -> tuple[PrimalDualPoint, QpSolution]:
    qp = linearize(z, xi_k, theta_k, window, config)
    warm = PrimalDualPoint(np.zeros(qp.n), z.lam, z.v)
    sol = solve_qp(qp, warm, qp_config)
    if sol.status is QpStatus.NUMERICAL_FAILURE:
        raise QpFailure(f"QP failed at theta={theta_k:.6f} after {sol.iterations} iterations")
    return PrimalDualPoint(z.w + sol.d, sol.lam, sol.v), sol


def sqp_iterate(z: PrimalDualPoint, xi_k, theta_k: float, reference_window,
                config: OcpConfig, qp_config: QpSolverConfig | None = None) -> PrimalDualPoint:
    """One full-step SQP update: linearize, solve the QP, take ``(w + d, lam*, v*)``."""
    return _sqp_step(z, xi_k, theta_k, reference_window, config,
                     qp_config or QpSolverConfig())[0]


def initialize(xi_0, theta_0: float, reference: ReferenceOrbit | None, config: OcpConfig,
               ell: int = 3, qp_config: QpSolverConfig | None = None,
               shift_warmstart: bool = False) -> ControllerState:
    """Cold start from the uncontrolled prediction with zero multipliers."""
    del reference  # the cold start only needs the measured state
    N = config.N
    states = propagate(theta_0, xi_0, np.zeros((N, 3)), config.dtheta, config.prediction_params)
    z = PrimalDualPoint(stack_w(states, np.zeros((N, 3))), np.zeros(config.n_eq),
                        np.zeros(config.n_ineq))
    return ControllerState(z, 0, ell, config, qp_config or QpSolverConfig(), shift_warmstart)


def shift_iterate(z: PrimalDualPoint, theta_k: float, config: OcpConfig) -> PrimalDualPoint:
    """Advance the horizon by one stage, repeating the last control."""
    N = config.N
    x, u = split_w(z.w, N)
    u_new = np.vstack([u[1:], u[-1:]])
    tail = rk4_step(theta_k + N * config.dtheta, x[-1], u[-1], config.dtheta,
                    config.prediction_params)
    x_new = np.vstack([x[1:], tail])
    lam = z.lam.reshape(N + 1, -1)
    v = z.v.reshape(N, -1)
    return PrimalDualPoint(stack_w(x_new, u_new),
                           np.vstack([lam[1:], lam[-1:]]).ravel(),
                           np.vstack([v[1:], v[-1:]]).ravel())


def control_step(controller: ControllerState, xi_k, theta_k: float,
                 reference: ReferenceOrbit):
    """Run ``ell`` SQP iterations from the persisted iterate and apply ``u*_0``.

    Returns ``(u_k, diagnostics, next_controller)``. The reported KKT norm is
    that of the persisted iterate against the current OCP instance.
    """
    start = time.perf_counter()
    config = controller.config
    xi_k = np.asarray(xi_k, dtype=float)
    window = reference_window(reference, controller.k, config.N)
    z = controller.z
    statuses, iters = [], []
    for _ in range(controller.ell):
        z, sol = _sqp_step(z, xi_k, theta_k, window, config, controller.qp_config)
        statuses.append(sol.status)
        iters.append(sol.iterations)
    qp = linearize(z, xi_k, theta_k, window, config)
    kkt = float(np.linalg.norm(np.concatenate(kkt_components(z, qp))))
    u = np.clip(split_w(z.w, config.N)[1][0], -config.u_max, config.u_max)
    if controller.shift_warmstart:
        z_next = shift_iterate(z, theta_k, config)
    else:
        z_next = z
    elapsed = time.perf_counter() - start
    diag = ControlDiagnostics(u.copy(), kkt, tuple(statuses), tuple(iters), elapsed)
    return u, diag, replace(controller, z=z_next, k=controller.k + 1)
