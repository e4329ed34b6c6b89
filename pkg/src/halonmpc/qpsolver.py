"""
Warmstartable solver for the stage-structured QPs produced by :mod:`ocp`.

Outer iterations apply the proximal point method to the QP's KKT operator;
each proximal subproblem is solved by a semismooth Newton method on a
penalized Fischer-Burmeister reformulation of the complementarity
conditions. Newton systems are quasi-definite and, after interleaving the
unknowns stage by stage, banded with a bandwidth that does not depend on
the horizon, so each solve costs O(N).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import numba
from scipy.linalg import get_lapack_funcs

from .ocp import PrimalDualPoint, QpData


class QpStatus(str, enum.Enum):
    SOLVED = "solved"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class QpSolverConfig:
    tolerance: float = 1e-8
    max_outer: int = 500
    max_inner: int = 500
    sigma: float = 1e-8
    sigma_floor: float = 1e-12
    sigma_max: float = 1e2
    alpha: float = 0.95
    inner_eta: float = 0.1
    dense_threshold: int = 64
    scale_cost: bool = True
    verbose: bool = False

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.sigma >= self.sigma_floor > 0.0:
            raise ValueError("sigma must be at least sigma_floor > 0")


@dataclass
class QpSolution:
    d: np.ndarray
    lam: np.ndarray
    v: np.ndarray
    status: QpStatus
    kkt_norm: float
    iterations: tuple[int, int]
    log: list = field(default_factory=list, repr=False)

    @property
    def solved(self) -> bool:
        return self.status is QpStatus.SOLVED


def _products(qp: QpData, d, lam, v):
    c = np.ascontiguousarray
    return _qp_products(c(qp.Q), c(qp.R), c(qp.A), c(qp.B), qp.f, qp.g, qp.h,
                        c(d, dtype=float), c(lam, dtype=float), c(v, dtype=float))


def qp_kkt_residuals(qp: QpData, d, lam, v):
    """Stationarity, equality, and natural complementarity residuals."""
    r1, r2, ineq = _products(qp, d, lam, v)
    return r1, r2, np.minimum(v, -ineq)


def qp_kkt_norm(qp: QpData, d, lam, v) -> float:
    return float(np.linalg.norm(np.concatenate(qp_kkt_residuals(qp, d, lam, v))))


# ---------------------------------------------------------------------------
# banded Newton solves


@numba.njit(cache=True)
def _qp_products(Q, R, A, B, f, g, h, z, lam, v):
    """``H z + f + G' lam + A' v``, ``G z + g`` and ``A z + h`` in one pass."""
    N, nx, nu = B.shape
    nX = nx * (N + 1)
    stat = f.copy()
    eq = g.copy()
    ineq = h.copy()
    for i in range(N + 1):
        xo = i * nx
        for r in range(nx):
            acc = lam[xo + r]
            for c in range(nx):
                acc += Q[r, c] * z[xo + c]
            stat[xo + r] += acc
            eq[xo + r] += z[xo + r]
    for i in range(N):
        xo = i * nx
        uo = nX + i * nu
        lo = (i + 1) * nx
        vo = 2 * nu * i
        for r in range(nx):
            acc = 0.0
            for c in range(nx):
                acc += A[i, r, c] * z[xo + c]
            for c in range(nu):
                acc += B[i, r, c] * z[uo + c]
            eq[lo + r] -= acc
        for c in range(nx):
            acc = 0.0
            for r in range(nx):
                acc += A[i, r, c] * lam[lo + r]
            stat[xo + c] -= acc
        for c in range(nu):
            acc = v[vo + c] - v[vo + nu + c]
            for r in range(nu):
                acc += R[c, r] * z[uo + r]
            for r in range(nx):
                acc -= B[i, r, c] * lam[lo + r]
            stat[uo + c] += acc
            ineq[vo + c] += z[uo + c]
            ineq[vo + nu + c] -= z[uo + c]
    return stat, eq, ineq


@numba.njit(cache=True)
def _band_matrix(Kx, Ku, A, B, sigma):
    """LAPACK band storage of the symmetrized Newton matrix in stage order
    ``lam_0, x_0, u_0, lam_1, x_1, u_1, ..., lam_N, x_N``.

    The extra ``bw`` leading rows are the fill-in workspace ``gbsv`` needs.
    """
    N, nx, nu = B.shape
    stride = 2 * nx + nu
    size = (N + 1) * 2 * nx + N * nu
    bw = 2 * nx + nu - 1 if N > 0 else nx
    ab = np.zeros((3 * bw + 1, size))
    d = 2 * bw
    for i in range(N + 1):
        lp = i * stride
        xp = lp + nx
        for r in range(nx):
            ab[d, lp + r] = -sigma
            # identity coupling lam_i <-> x_i
            ab[d + (lp + r) - (xp + r), xp + r] = 1.0
            ab[d + (xp + r) - (lp + r), lp + r] = 1.0
            for c in range(nx):
                ab[d + (xp + r) - (xp + c), xp + c] = Kx[i, r, c]
        if i == N:
            break
        up = lp + 2 * nx
        ln = lp + stride
        for r in range(nu):
            for c in range(nu):
                ab[d + (up + r) - (up + c), up + c] = Ku[i, r, c]
        for r in range(nx):
            for c in range(nx):
                ab[d + (ln + r) - (xp + c), xp + c] = -A[i, r, c]
                ab[d + (xp + c) - (ln + r), ln + r] = -A[i, r, c]
            for c in range(nu):
                ab[d + (ln + r) - (up + c), up + c] = -B[i, r, c]
                ab[d + (up + c) - (ln + r), ln + r] = -B[i, r, c]
    return ab, bw


@lru_cache(maxsize=32)
def _layout(N: int, nx: int, nu: int):
    """Positions of the primal and dual unknowns in the stage ordering."""
    stride = 2 * nx + nu
    lam_pos = (np.arange(N + 1)[:, None] * stride + np.arange(nx)).ravel()
    x_pos = (np.arange(N + 1)[:, None] * stride + nx + np.arange(nx)).ravel()
    u_pos = (np.arange(N)[:, None] * stride + 2 * nx + np.arange(nu)).ravel()
    return np.concatenate([x_pos, u_pos]), lam_pos


_gbsv = get_lapack_funcs("gbsv", dtype=np.float64)


def structured_linear_solve(Kx, Ku, A, B, sigma: float, r_z, r_lam,
                            dense_threshold: int = 64):
    """Solve the proximal Newton system of a stage-structured QP.

    The system is::

        [ K   G'      ] [dz  ]     [r_z  ]
        [ -G  sigma I ] [dlam] = - [r_lam]

    where ``K`` is block diagonal with ``Kx[i]`` on state block ``i`` and
    ``Ku[i]`` on control block ``i``, and ``G`` is the dynamics Jacobian with
    identity blocks on ``x_0`` and ``x_{i+1}`` and ``-A[i]``, ``-B[i]`` on
    ``x_i``, ``u_i``. Systems with fewer than ``dense_threshold`` unknowns are
    solved densely.
    """
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    N, nx, nu = B.shape
    z_pos, lam_pos = _layout(N, nx, nu)
    size = len(z_pos) + len(lam_pos)
    # symmetric quasi-definite form: negate the second block row
    rhs = np.empty(size)
    rhs[z_pos] = -np.asarray(r_z)
    rhs[lam_pos] = np.asarray(r_lam)
    ab, bw = _band_matrix(np.ascontiguousarray(np.broadcast_to(Kx, (N + 1, nx, nx))),
                          np.ascontiguousarray(np.broadcast_to(Ku, (N, nu, nu))),
                          A, B, float(sigma))
    if size < dense_threshold:
        m = np.zeros((size, size))
        for k in range(-bw, bw + 1):
            m += np.diag(ab[2 * bw - k, max(k, 0):size + min(k, 0)], k)
        sol = np.linalg.solve(m, rhs)
    else:
        _, _, sol, info = _gbsv(bw, bw, ab, rhs, overwrite_ab=True, overwrite_b=True)
        if info != 0:
            raise np.linalg.LinAlgError("singular Newton system")
    return sol[z_pos], sol[lam_pos]


# ---------------------------------------------------------------------------
# penalized Fischer-Burmeister machinery


def _pfb(a, b, alpha):
    root = np.sqrt(a * a + b * b)
    return alpha * (a + b - root) + (1.0 - alpha) * np.maximum(a, 0.0) * np.maximum(b, 0.0)


def _pfb_derivative(a, b, alpha):
    root = np.sqrt(a * a + b * b)
    safe = np.where(root > 0.0, root, 1.0)
    da = np.where(root > 0.0, 1.0 - a / safe, 1.0 - np.sqrt(0.5))
    db = np.where(root > 0.0, 1.0 - b / safe, 1.0 - np.sqrt(0.5))
    da = alpha * da + (1.0 - alpha) * np.maximum(b, 0.0) * (a > 0.0)
    db = alpha * db + (1.0 - alpha) * np.maximum(a, 0.0) * (b > 0.0)
    return da, db


class _Subproblem:
    """Residual of the proximal subproblem centred at ``(zb, lb, vb)``."""

    def __init__(self, qp: QpData, sigma: float, center, alpha: float):
        self.qp = qp
        self.sigma = sigma
        self.zb, self.lb, self.vb = center
        self.alpha = alpha

    def residual(self, z, lam, v):
        s = self.sigma
        stat, eq, ineq = _products(self.qp, z, lam, v)
        f1 = stat + s * (z - self.zb)
        f2 = -eq + s * (lam - self.lb)
        a = -ineq + s * (v - self.vb)
        f3 = _pfb(a, v, self.alpha)
        return f1, f2, f3, a

    def newton_step(self, z, lam, v, res, floor, dense_threshold):
        qp, s = self.qp, self.sigma
        f1, f2, f3, a = res
        ga, gb = _pfb_derivative(a, v, self.alpha)
        dd = np.maximum(ga * s + gb, floor)
        weight = (ga / dd).reshape(qp.N, 2, qp.nu).sum(axis=1)
        rz = f1 - qp.ineq_tmv(f3 / dd)
        kx = np.broadcast_to(qp.Q + s * np.eye(qp.nx), (qp.N + 1, qp.nx, qp.nx))
        ku = qp.R + s * np.eye(qp.nu) + weight[:, :, None] * np.eye(qp.nu)
        dz, dl = structured_linear_solve(kx, ku, qp.A, qp.B, s, rz, f2, dense_threshold)
        dv = (ga * qp.ineq_mv(dz) - f3) / dd
        return dz, dl, dv


def cost_scale(qp: QpData) -> float:
    """Objective divisor that centres the Hessian diagonal on one.

    The geometric mean of the largest and smallest diagonal entries of the
    weights; the scaled Hessian then has extreme diagonal entries ``r`` and
    ``1/r``. Cost and state weights that differ by orders of magnitude
    otherwise leave the semismooth Newton iteration badly damped.
    """
    diag = np.abs(np.concatenate([np.diag(qp.Q), np.diag(qp.R)]))
    diag = diag[diag > 0.0]
    if diag.size == 0:
        return 1.0
    return float(np.sqrt(diag.max() * diag.min()))


def solve_qp(qp: QpData, warmstart: PrimalDualPoint | None = None,
             config: QpSolverConfig | None = None) -> QpSolution:
    """Solve ``qp`` from an optional primal-dual warmstart.

    ``warmstart.w`` is interpreted as the initial primal step ``d``. When the
    iteration budget runs out the current iterate is returned with status
    ``max_iterations`` so that callers can use the inexact solution.
    Multipliers are returned for the unscaled problem.
    """
    config = config or QpSolverConfig()
    if warmstart is None:
        d, lam, v = np.zeros(qp.n), np.zeros(qp.m_eq), np.zeros(qp.m_in)
    else:
        d, lam, v = (np.array(warmstart.w, dtype=float), np.array(warmstart.lam, dtype=float),
                     np.maximum(np.array(warmstart.v, dtype=float), 0.0))
    log = []
    data_ok = all(np.all(np.isfinite(x)) for x in (qp.Q, qp.R, qp.f, qp.A, qp.B, qp.g, qp.h))
    if not data_ok or not all(np.all(np.isfinite(x)) for x in (d, lam, v)):
        return QpSolution(d, lam, v, QpStatus.NUMERICAL_FAILURE, float("nan"), (0, 0), log)

    # Newton iterations are run on a cost-scaled copy; residuals are always
    # measured on the original problem
    scale = cost_scale(qp) if config.scale_cost else 1.0
    sq = QpData(qp.Q / scale, qp.R / scale, qp.f / scale, qp.A, qp.B, qp.g, qp.h)
    lam, v = lam / scale, v / scale

    def kkt_of(d, lam, v):
        return qp_kkt_norm(qp, d, scale * lam, scale * v)

    tol = config.tolerance
    sigma = config.sigma
    kkt = kkt_of(d, lam, v)
    inner_total = 0
    outer = 0
    status = QpStatus.MAX_ITERATIONS
    if kkt <= tol:
        status = QpStatus.SOLVED
    while status is not QpStatus.SOLVED and outer < config.max_outer \
            and inner_total < config.max_inner:
        outer += 1
        sub = _Subproblem(sq, sigma, (d.copy(), lam.copy(), v.copy()), config.alpha)
        res = sub.residual(d, lam, v)
        merit = 0.5 * sum(float(r @ r) for r in res[:3])
        stalled = False
        while inner_total < config.max_inner:
            dist = np.sqrt(np.sum((d - sub.zb) ** 2) + np.sum((lam - sub.lb) ** 2)
                           + np.sum((v - sub.vb) ** 2))
            if inner_total > 0 and np.sqrt(2.0 * merit) <= config.inner_eta * min(1.0, dist):
                break
            try:
                dz, dl, dv = sub.newton_step(d, lam, v, res, config.sigma_floor,
                                             config.dense_threshold)
            except np.linalg.LinAlgError:
                stalled = True
                break
            inner_total += 1
            if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(dl))
                    and np.all(np.isfinite(dv))):
                stalled = True
                break
            t = 1.0
            while True:
                trial = (d + t * dz, lam + t * dl, v + t * dv)
                trial_res = sub.residual(*trial)
                trial_merit = 0.5 * sum(float(r @ r) for r in trial_res[:3])
                if trial_merit <= (1.0 - 2e-4 * t) * merit or t < 1e-10:
                    break
                t *= 0.5
            if t < 1e-10:
                stalled = True
                break
            d, lam, v = trial
            res, merit = trial_res, trial_merit
            kkt = kkt_of(d, lam, v)
            if config.verbose:
                log.append((outer, inner_total, kkt))
            if kkt <= tol:
                status = QpStatus.SOLVED
                break
        if status is QpStatus.SOLVED:
            break
        if stalled:
            if sigma >= config.sigma_max:
                break
            sigma = min(10.0 * sigma, config.sigma_max)
        kkt = kkt_of(d, lam, v)
        if kkt <= tol:
            status = QpStatus.SOLVED
    if not (np.all(np.isfinite(d)) and np.isfinite(kkt)):
        status = QpStatus.NUMERICAL_FAILURE
    return QpSolution(d, scale * lam, scale * v, status, kkt, (outer, inner_total), log)


def write_qp_log(solution: QpSolution, path):
    """Per-iteration ``outer, inner, residual`` rows as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outer", "inner", "residual"])
        writer.writerows(solution.log)
