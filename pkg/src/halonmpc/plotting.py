"""
PNG renderings of command outputs.

Only the command-line tools import this module, and only when asked to
plot, so the library itself has no matplotlib dependency at import time.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dynamics import thrust_nondim_to_mN  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_orbits(references, path, labels=None) -> Path:
    """3-D view of one or more reference orbits."""
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    for i, ref in enumerate(references):
        s = ref.samples
        ax.plot(s[:, 0], s[:, 1], s[:, 2], lw=0.8,
                label=None if labels is None else labels[i])
    ax.set_xlabel("x [LU]")
    ax.set_ylabel("y [LU]")
    ax.set_zlabel("z [LU]")
    if labels is not None and len(labels) <= 12:
        ax.legend(fontsize="small")
    return _save(fig, path)


def plot_simulation(log, stem) -> list[Path]:
    """Trajectory, tracking error and thrust history of one closed-loop run."""
    stem = Path(stem)
    out = []
    t = log.t_hours

    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    ax.plot(*log.reference[:, :3].T, "k--", lw=0.8, label="reference")
    ax.plot(*log.state[:, :3].T, lw=0.8, label="spacecraft")
    ax.set_xlabel("x [LU]")
    ax.set_ylabel("y [LU]")
    ax.set_zlabel("z [LU]")
    ax.legend(fontsize="small")
    out.append(_save(fig, stem.with_name(stem.name + "_trajectory.png")))

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.semilogy(t, np.maximum(log.position_error_km, 1e-6))
    ax.set_xlabel("time [h]")
    ax.set_ylabel("position error [km]")
    ax.grid(True, which="both", alpha=0.3)
    out.append(_save(fig, stem.with_name(stem.name + "_error.png")))

    fig, ax = plt.subplots(figsize=(7, 3.5))
    u = log.u_mN[:-1]
    for j, name in enumerate("xyz"):
        ax.step(t[:-1], u[:, j], where="post", lw=0.8, label=f"u_{name}")
    limit = float(thrust_nondim_to_mN(log.u_max, log.params))
    ax.axhline(limit, color="k", lw=0.5, ls=":")
    ax.axhline(-limit, color="k", lw=0.5, ls=":")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("thrust [mN]")
    ax.legend(fontsize="small", ncol=3)
    out.append(_save(fig, stem.with_name(stem.name + "_control.png")))
    return out


def plot_monte_carlo(runs, path) -> Path:
    """Position-error histories of every Monte Carlo run."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for run in runs:
        if run.log is not None:
            ax.semilogy(run.log.t_hours, np.maximum(run.log.position_error_km, 1e-6), lw=0.8)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("position error [km]")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_sweep(points, path) -> Path:
    """Closed-loop cost against the SQP iteration cap."""
    pts = [p for p in points if np.isfinite(p.J)]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy([p.ell for p in pts], [p.J for p in pts], "o-")
    ax.set_xlabel("SQP iterations per step")
    ax.set_ylabel("closed-loop cost J")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)
