"""
Horizon-N tracking optimal control problem in multiple-shooting form.

The decision vector stacks the predicted states first and the controls
second::

    w = (xi_0, ..., xi_N, u_0, ..., u_{N-1})

Equality constraints pin ``xi_0`` to the measured state and chain the RK4
prediction model; the infinity-norm thrust bound becomes two one-sided rows
``+u_i - u_max`` and ``-u_i - u_max`` per stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ThreeBodyParams, thrust_mN_to_nondim
from .integrator import linearize_horizon

NX = 6
NU = 3


def table1_weights() -> tuple[np.ndarray, np.ndarray]:
    """State and control weights of the reference tuning."""
    q = 1e3 * np.diag([10.0, 10.0, 10.0, 1.0, 1.0, 1.0])
    return q, np.eye(3)


def _check_spd(name, m, size):
    m = np.asarray(m, dtype=float)
    if m.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return m


@dataclass(frozen=True)
class OcpConfig:
    """Data of the tracking problem; all quantities nondimensional."""

    N: int
    Q: np.ndarray
    R: np.ndarray
    u_max: float
    dtheta: float
    mu: float = 0.012

    def __post_init__(self):
        if self.N <= 0:
            raise ValueError("horizon N must be positive")
        if not self.u_max > 0.0:
            raise ValueError("u_max must be positive")
        if not self.dtheta > 0.0:
            raise ValueError("dtheta must be positive")
        object.__setattr__(self, "Q", _check_spd("Q", self.Q, NX))
        object.__setattr__(self, "R", _check_spd("R", self.R, NU))

    @classmethod
    def table1(cls, params: ThreeBodyParams | None = None, N: int = 35,
               dtheta: float = 0.01, u_max_mN: float = 2000.0) -> "OcpConfig":
        params = params or ThreeBodyParams()
        q, r = table1_weights()
        return cls(N, q, r, float(thrust_mN_to_nondim(u_max_mN, params)), dtheta, params.mu)

    @property
    def prediction_params(self) -> ThreeBodyParams:
        return ThreeBodyParams(mu=self.mu, e=0.0)

    @property
    def n_primal(self) -> int:
        return NX * (self.N + 1) + NU * self.N

    @property
    def n_eq(self) -> int:
        return NX * (self.N + 1)

    @property
    def n_ineq(self) -> int:
        return 2 * NU * self.N


@dataclass
class PrimalDualPoint:
    """Primal-dual estimate ``(w, lambda, v)``."""

    w: np.ndarray
    lam: np.ndarray
    v: np.ndarray

    def copy(self) -> "PrimalDualPoint":
        return PrimalDualPoint(self.w.copy(), self.lam.copy(), self.v.copy())

    @classmethod
    def zeros(cls, n: int, m_eq: int, m_in: int) -> "PrimalDualPoint":
        return cls(np.zeros(n), np.zeros(m_eq), np.zeros(m_in))


def split_w(w, N: int, nx: int = NX, nu: int = NU) -> tuple[np.ndarray, np.ndarray]:
    """Views of the stacked states ``(N+1, nx)`` and controls ``(N, nu)``."""
    w = np.asarray(w)
    if w.shape != (nx * (N + 1) + nu * N,):
        raise ValueError(f"w has shape {w.shape}, expected ({nx * (N + 1) + nu * N},)")
    k = nx * (N + 1)
    return w[:k].reshape(N + 1, nx), w[k:].reshape(N, nu)


def stack_w(states, controls) -> np.ndarray:
    return np.concatenate([np.ravel(states), np.ravel(controls)])


def _check_window(ref, N):
    ref = np.asarray(ref, dtype=float)
    if ref.shape != (N + 1, NX):
        raise ValueError(f"reference window must have shape ({N + 1}, {NX}), got {ref.shape}")
    return ref


def eval_cost(w, reference_window, config: OcpConfig) -> float:
    """Half the weighted tracking error over all N+1 states plus control effort."""
    x, u = split_w(w, config.N)
    err = x - _check_window(reference_window, config.N)
    return 0.5 * (np.einsum("ki,ij,kj->", err, config.Q, err)
                  + np.einsum("ki,ij,kj->", u, config.R, u))


def cost_gradient(w, reference_window, config: OcpConfig) -> np.ndarray:
    x, u = split_w(w, config.N)
    err = x - _check_window(reference_window, config.N)
    return stack_w(err @ config.Q, u @ config.R)


def eval_constraints(w, xi_k, theta_k: float, config: OcpConfig):
    """Equality residual ``g`` and inequality residual ``h`` at ``w``."""
    x, u = split_w(w, config.N)
    nxt, _, _ = linearize_horizon(theta_k, x[:-1], u, config.dtheta, config.prediction_params)
    g = np.concatenate([x[0] - np.asarray(xi_k, dtype=float), (x[1:] - nxt).ravel()])
    return g, box_residual(u, config.u_max)


def box_residual(u, u_max: float) -> np.ndarray:
    u = np.asarray(u)
    return np.concatenate([u - u_max, -u - u_max], axis=1).ravel()


@dataclass
class QpData:
    """Stage-structured convex QP

        min  0.5 d' H d + f' d
        s.t. G d + g = 0,   A d + h <= 0

    ``H`` is block diagonal with ``Q`` on all ``N + 1`` state blocks and ``R``
    on all control blocks. ``G`` has an identity on ``x_0`` for the first row
    block and ``I x_{i+1} - A_i x_i - B_i u_i`` for row block ``i + 1``. ``A``
    has rows ``+u_i`` and ``-u_i`` per stage.
    """

    Q: np.ndarray
    R: np.ndarray
    f: np.ndarray
    A: np.ndarray
    B: np.ndarray
    g: np.ndarray
    h: np.ndarray
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        N, nx, nu = self.N, self.nx, self.nu
        if self.A.shape != (N, nx, nx) or self.B.shape != (N, nx, nu):
            raise ValueError("dynamics blocks have inconsistent shapes")
        if self.Q.shape != (nx, nx) or self.R.shape != (nu, nu):
            raise ValueError("weight blocks have inconsistent shapes")
        if self.f.shape != (self.n,) or self.g.shape != (self.m_eq,) \
                or self.h.shape != (self.m_in,):
            raise ValueError("vector data have inconsistent shapes")

    @property
    def N(self) -> int:
        return self.B.shape[0]

    @property
    def nx(self) -> int:
        return self.B.shape[1]

    @property
    def nu(self) -> int:
        return self.B.shape[2]

    @property
    def n(self) -> int:
        return self.nx * (self.N + 1) + self.nu * self.N

    @property
    def m_eq(self) -> int:
        return self.nx * (self.N + 1)

    @property
    def m_in(self) -> int:
        return 2 * self.nu * self.N

    def split(self, d):
        return split_w(d, self.N, self.nx, self.nu)

    # structured products
    def hess_mv(self, d):
        x, u = self.split(d)
        return stack_w(x @ self.Q, u @ self.R)

    def eq_mv(self, d):
        x, u = self.split(d)
        out = np.empty((self.N + 1, self.nx))
        out[0] = x[0]
        out[1:] = x[1:] - np.einsum("kij,kj->ki", self.A, x[:-1]) \
            - np.einsum("kij,kj->ki", self.B, u)
        return out.ravel()

    def eq_tmv(self, lam):
        lam = lam.reshape(self.N + 1, self.nx)
        gx = lam.copy()
        gx[:-1] -= np.einsum("kij,ki->kj", self.A, lam[1:])
        gu = -np.einsum("kij,ki->kj", self.B, lam[1:])
        return stack_w(gx, gu)

    def ineq_mv(self, d):
        _, u = self.split(d)
        return np.concatenate([u, -u], axis=1).ravel()

    def ineq_tmv(self, v):
        v = v.reshape(self.N, 2 * self.nu)
        gu = v[:, :self.nu] - v[:, self.nu:]
        return stack_w(np.zeros((self.N + 1, self.nx)), gu)

    # dense views, for oracles and small problems
    def hessian(self) -> np.ndarray:
        if "H" not in self._dense:
            blocks = [self.Q] * (self.N + 1) + [self.R] * self.N
            from scipy.linalg import block_diag
            self._dense["H"] = block_diag(*blocks)
        return self._dense["H"]

    def eq_jacobian(self) -> np.ndarray:
        if "G" not in self._dense:
            self._dense["G"] = np.column_stack([self.eq_mv(e) for e in np.eye(self.n)])
        return self._dense["G"]

    def ineq_jacobian(self) -> np.ndarray:
        if "A" not in self._dense:
            self._dense["A"] = np.column_stack([self.ineq_mv(e) for e in np.eye(self.n)])
        return self._dense["A"]

    def objective(self, d) -> float:
        return 0.5 * float(d @ self.hess_mv(d)) + float(self.f @ d)

    # debug dump
    def to_dict(self) -> dict:
        return {
            "format": "halonmpc-qpdata v1",
            "N": self.N, "nx": self.nx, "nu": self.nu,
            "Q": self.Q.tolist(), "R": self.R.tolist(),
            "f": self.f.tolist(), "A": self.A.tolist(), "B": self.B.tolist(),
            "g": self.g.tolist(), "h": self.h.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QpData":
        return cls(*(np.array(data[k], dtype=float) for k in ("Q", "R", "f", "A", "B", "g", "h")))

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "QpData":
        return cls.from_dict(json.loads(Path(path).read_text()))


def linearize(z: PrimalDualPoint, xi_k, theta_k: float, reference_window,
              config: OcpConfig) -> QpData:
    """QP subproblem at ``z``: exact cost Hessian, RK4-sensitivity Jacobians."""
    x, u = split_w(z.w, config.N)
    ref = _check_window(reference_window, config.N)
    nxt, a, b = linearize_horizon(theta_k, x[:-1], u, config.dtheta, config.prediction_params)
    g = np.concatenate([x[0] - np.asarray(xi_k, dtype=float), (x[1:] - nxt).ravel()])
    f = stack_w((x - ref) @ config.Q, u @ config.R)
    return QpData(config.Q, config.R, f, a, b, g, box_residual(u, config.u_max))


def kkt_components(z: PrimalDualPoint, qp: QpData):
    """Stationarity, equality and complementarity residuals of the NLP at ``z``.

    ``qp`` must be the linearization at ``z``; its gradient and Jacobians are
    those of the nonlinear problem there.
    """
    stat = qp.f + qp.eq_tmv(z.lam) + qp.ineq_tmv(z.v)
    comp = np.minimum(z.v, -qp.h)
    return stat, qp.g, comp


def kkt_residual(z: PrimalDualPoint, xi_k, theta_k: float, reference_window,
                 config: OcpConfig) -> float:
    """Euclidean norm of the stacked KKT residual of the tracking NLP."""
    qp = linearize(z, xi_k, theta_k, reference_window, config)
    return float(np.linalg.norm(np.concatenate(kkt_components(z, qp))))
