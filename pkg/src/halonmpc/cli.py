"""
Command-line entry point.

::

    halonmpc orbit       [--x0 X ... | --x0-range START STOP COUNT] [--tol TOL]
    halonmpc simulate    [--e E] [--ell L] [--revolutions R]
    halonmpc montecarlo  [--samples S] [--dr-max-km D] [--dv-max-kms V]
    halonmpc sweep-tdo   [--ell-values L ...]

Every command accepts ``--config``, ``--out-dir``, ``--seed``, ``--verbose``
and ``--plot``. Flags override the configuration file. Each output
directory receives ``config.json``, the fully resolved configuration; running
the same command with ``--config <out-dir>/config.json`` reproduces the
bundle. Wall-clock timings are the only nondeterministic outputs and are
zeroed by ``--no-timing``.

Exit status is 0 on success, 1 for invalid input and 2 for runtime failures
(shooting divergence, failed simulations).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .dynamics import thrust_nondim_to_mN
from .orbits import ShootingError, periodize, shoot_halo, sweep_family, write_reference
from .sim import monte_carlo, simulate, tdo_sweep

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

TDO_CSV_VERSION = "halonmpc-tdo-sweep v1"
FAMILY_CSV_VERSION = "halonmpc-family v1"

log = logging.getLogger("halonmpc")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


class _RuntimeFailure(Exception):
    def __init__(self, payload: dict):
        super().__init__(payload.get("message", ""))
        self.payload = payload


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", type=Path, help="JSON run configuration")
    g.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")
    g.add_argument("--seed", type=int, help="process-noise and sampling seed")
    g.add_argument("--verbose", "-v", action="count", default=0)
    g.add_argument("--plot", action="store_true", help="also render PNG figures")
    g.add_argument("--mu", type=float, help="mass ratio")
    g.add_argument("--dtheta-rad", type=float, help="controller and reference grid step")

    closed = argparse.ArgumentParser(add_help=False)
    c = closed.add_argument_group("closed-loop options")
    c.add_argument("--e", type=float, help="plant eccentricity")
    c.add_argument("--ell", type=int, help="SQP iterations per sampling instant")
    c.add_argument("--tau-kms2", type=float, help="process-noise level [km/s^2]")
    c.add_argument("--revolutions", type=float, help="simulated orbit revolutions")
    c.add_argument("--shift-warmstart", action="store_true", default=None,
                   help="shift the carried-over iterate by one stage")
    c.add_argument("--no-timing", action="store_true",
                   help="record zero wall times so that outputs are bitwise reproducible")

    parser = _Parser(prog="halonmpc", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("orbit", parents=[common], help="shoot halo orbits")
    p.add_argument("--x0", type=float, nargs="+", action="extend",
                   help="x-axis crossing; several values sweep a family")
    p.add_argument("--x0-range", type=float, nargs=3, metavar=("START", "STOP", "COUNT"),
                   help="sweep COUNT evenly spaced x0 values")
    p.add_argument("--tol", type=float, help="crossing residual tolerance")
    p.add_argument("--z0-guess", type=float)
    p.add_argument("--ydot0-guess", type=float)
    p.set_defaults(handler=cmd_orbit)

    p = sub.add_parser("simulate", parents=[common, closed], help="one closed-loop run")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("montecarlo", parents=[common, closed],
                       help="closed-loop runs from sampled initial states")
    p.add_argument("--samples", type=int)
    p.add_argument("--dr-max-km", type=float)
    p.add_argument("--dv-max-kms", type=float)
    p.set_defaults(handler=cmd_montecarlo)

    p = sub.add_parser("sweep-tdo", parents=[common, closed],
                       help="closed-loop cost against the SQP iteration cap")
    p.add_argument("--ell-values", type=int, nargs="+")
    p.set_defaults(handler=cmd_sweep_tdo)
    return parser


# ---------------------------------------------------------------------------
# configuration


def resolve_config(args) -> RunConfig:
    """Configuration file (or defaults) with command-line overrides applied."""
    base = RunConfig.load(args.config) if args.config else RunConfig()
    get = lambda name: getattr(args, name, None)  # noqa: E731
    sim = {"seed": args.seed, "ell": get("ell"), "tau_kms2": get("tau_kms2"),
           "shift_warmstart": get("shift_warmstart")}
    if get("no_timing"):
        sim["record_timing"] = False
    revs = get("revolutions")
    if args.command == "simulate":
        sim["revolutions"] = revs
    overrides = {
        "model": {"mu": args.mu, "e": get("e")},
        "ocp": {"dtheta_rad": args.dtheta_rad},
        "sim": sim,
        "orbit": {"tol": get("tol"), "z0_guess": get("z0_guess"),
                  "ydot0_guess": get("ydot0_guess")},
        "montecarlo": {"samples": get("samples"), "dr_max_km": get("dr_max_km"),
                       "dv_max_kms": get("dv_max_kms"),
                       "revolutions": revs if args.command == "montecarlo" else None},
        "sweep": {"ell_values": get("ell_values"),
                  "revolutions": revs if args.command == "sweep-tdo" else None},
    }
    x0 = _x0_values(args) if args.command == "orbit" else None
    if x0 is not None:
        overrides["orbit"].update({"x0": x0[0]} if len(x0) == 1 else {"family": x0})
    config = base.with_overrides(**overrides)
    if x0 is not None and len(x0) == 1 and config.orbit.family is not None:
        # an explicit single x0 replaces a family from the file
        data = config.to_dict()
        data["orbit"]["family"] = None
        config = RunConfig.from_dict(data)
    return config


def _x0_values(args) -> list[float] | None:
    if args.x0_range is not None:
        start, stop, count = args.x0_range
        if count < 1 or count != int(count):
            raise ConfigError("--x0-range COUNT must be a positive integer")
        return [float(x) for x in np.linspace(start, stop, int(count))]
    if args.x0:
        return [float(x) for x in args.x0]
    return None


# ---------------------------------------------------------------------------
# shared helpers


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _orbit_meta(orbit) -> dict:
    return {"x0": float(orbit.initial_state[0]), "z0": float(orbit.initial_state[2]),
            "ydot0": float(orbit.initial_state[4]), "orbit_period": float(orbit.period),
            "crossing_residual": float(np.max(np.abs(orbit.crossing_residual))),
            "shooting_iterations": int(orbit.iterations)}


def _shoot(config: RunConfig, x0: float | None = None):
    o = config.orbit
    x0 = o.x0 if x0 is None else x0
    try:
        return shoot_halo(x0, o.z0_guess, o.ydot0_guess, config.model.mu, tol=o.tol,
                          max_iter=o.max_iter, step=o.shooting_step)
    except ShootingError as exc:
        raise _RuntimeFailure({"error": "shooting_failed", "x0": x0,
                               "mu": config.model.mu, "message": str(exc)}) from exc


def _reference(config: RunConfig, orbit):
    o = config.orbit
    return periodize(orbit, config.ocp.dtheta_rad, step=o.shooting_step, shift=o.shift,
                     fit_grid=o.fit_grid)


def _prepare_closed_loop(config: RunConfig, out: Path):
    orbit = _shoot(config)
    ref = _reference(config, orbit)
    write_reference(ref, out / "reference.csv",
                    {**_orbit_meta(orbit), "dtheta_requested": config.ocp.dtheta_rad})
    log.info("reference: %d steps of %.6g rad, closure shift %.3g",
             ref.period_steps, ref.dtheta, ref.shift_magnitude)
    return ref


def _reference_meta(ref) -> dict:
    return {"period_steps": ref.period_steps, "dtheta": ref.dtheta,
            "shift_magnitude": ref.shift_magnitude}


# ---------------------------------------------------------------------------
# commands


def cmd_orbit(args, config: RunConfig, out: Path) -> dict:
    x0_values = config.orbit.family or [config.orbit.x0]
    if len(x0_values) == 1:
        orbit = _shoot(config, x0_values[0])
        ref = _reference(config, orbit)
        meta = _orbit_meta(orbit)
        write_reference(ref, out / "reference.csv",
                        {**meta, "dtheta_requested": config.ocp.dtheta_rad})
        if args.plot:
            from .plotting import plot_orbits
            plot_orbits([ref], out / "reference.png")
        return {"status": "ok", **meta, **_reference_meta(ref)}

    o = config.orbit
    members = sweep_family(x0_values, config.model.mu, o.z0_guess, o.ydot0_guess, tol=o.tol,
                           max_iter=o.max_iter, step=o.shooting_step)
    rows, refs, labels, failures = [], [], [], []
    for i, m in enumerate(members):
        if m.orbit is None:
            failures.append({"error": "shooting_failed", "x0": m.x0, "message": m.error})
            rows.append([i, repr(m.x0), "", "", "", "", "failed", ""])
            continue
        ref = _reference(config, m.orbit)
        name = f"member_{i:03d}.csv"
        meta = _orbit_meta(m.orbit)
        write_reference(ref, out / name, {**meta, "dtheta_requested": config.ocp.dtheta_rad})
        refs.append(ref)
        labels.append(f"x0={m.x0:.5f}")
        rows.append([i, repr(m.x0), repr(meta["z0"]), repr(meta["ydot0"]),
                     repr(meta["orbit_period"]), repr(meta["crossing_residual"]), "ok", name])
    with open(out / "family_index.csv", "w", newline="") as fh:
        fh.write(f"# {FAMILY_CSV_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["index", "x0", "z0", "ydot0", "period", "crossing_residual",
                         "status", "file"])
        writer.writerows(rows)
    if args.plot and refs:
        from .plotting import plot_orbits
        plot_orbits(refs, out / "family.png", labels)
    result = {"status": "ok" if not failures else "partial", "members": len(members),
              "converged": len(refs), "failures": failures}
    if failures:
        raise _RuntimeFailure({"error": "shooting_failed", "message":
                               f"{len(failures)} of {len(members)} family members failed",
                               "failures": failures})
    return result


def cmd_simulate(args, config: RunConfig, out: Path) -> dict:
    ref = _prepare_closed_loop(config, out)
    sim = config.sim_config(None, ref.dtheta)
    run = simulate(sim, ref)
    run.to_csv(out / "simlog.csv")
    summary = run.summary(sim.ocp.Q, sim.ocp.R)
    summary.update(config=config.to_dict(), seed=config.sim.seed,
                   reference=_reference_meta(ref),
                   u_max_mN=float(thrust_nondim_to_mN(sim.ocp.u_max, sim.params)))
    _write_json(out / "summary.json", summary)
    if args.plot:
        from .plotting import plot_simulation
        plot_simulation(run, out / "simlog")
    if run.failure:
        raise _RuntimeFailure({"error": "simulation_failed", "message": run.failure})
    return summary


def cmd_montecarlo(args, config: RunConfig, out: Path) -> dict:
    ref = _prepare_closed_loop(config, out)
    base = config.sim_config(config.montecarlo.revolutions, ref.dtheta)
    runs = monte_carlo(config.hypercube(), base, ref, config.montecarlo.converged_km)
    records = []
    for run in runs:
        rec = {"index": run.index, "initial_state": [float(x) for x in run.initial_state],
               "converged": run.converged, "J": run.J, "error": run.error}
        if run.log is not None:
            name = f"run_{run.index:03d}.csv"
            run.log.to_csv(out / name)
            s = run.log.summary(base.ocp.Q, base.ocp.R)
            rec.update(file=name, terminal_position_error_km=s["terminal_position_error_km"],
                       max_position_error_km=s["max_position_error_km"],
                       max_control_mN=s["max_control_mN"],
                       saturation_count=s["saturation_count"], mean_step_ms=s["mean_step_ms"])
        records.append(rec)
    summary = {"runs": records, "samples": len(runs),
               "converged_count": sum(r.converged for r in runs),
               "all_converged": all(r.converged for r in runs),
               "converged_km": config.montecarlo.converged_km,
               "config": config.to_dict(), "seed": config.sim.seed,
               "reference": _reference_meta(ref)}
    _write_json(out / "montecarlo.json", summary)
    if args.plot:
        from .plotting import plot_monte_carlo
        plot_monte_carlo(runs, out / "montecarlo_error.png")
    failed = [r for r in runs if r.error]
    if failed:
        raise _RuntimeFailure({"error": "simulation_failed", "message":
                               f"{len(failed)} of {len(runs)} runs failed",
                               "runs": [r.index for r in failed]})
    return {k: summary[k] for k in ("samples", "converged_count", "all_converged")}


def cmd_sweep_tdo(args, config: RunConfig, out: Path) -> dict:
    ref = _prepare_closed_loop(config, out)
    base = config.sim_config(config.sweep.revolutions, ref.dtheta)
    points = tdo_sweep(config.sweep.ell_values, base, ref)
    with open(out / "tdo_sweep.csv", "w", newline="") as fh:
        fh.write(f"# {TDO_CSV_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["ell", "J", "mean_step_ms", "error"])
        for p in points:
            writer.writerow([p.ell, repr(p.J), repr(p.mean_step_ms), p.error or ""])
    summary = {"points": [{"ell": p.ell, "J": p.J, "mean_step_ms": p.mean_step_ms,
                           "error": p.error} for p in points],
               "config": config.to_dict(), "seed": config.sim.seed,
               "reference": _reference_meta(ref)}
    _write_json(out / "tdo_sweep.json", summary)
    if args.plot:
        from .plotting import plot_sweep
        plot_sweep(points, out / "tdo_sweep.png")
    failed = [p for p in points if p.error]
    if failed:
        raise _RuntimeFailure({"error": "simulation_failed", "message":
                               f"{len(failed)} of {len(points)} sweep runs failed",
                               "ell": [p.ell for p in failed]})
    return {"J": {p.ell: p.J for p in points}}


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=max(logging.DEBUG, logging.WARNING - 10 * args.verbose),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        out = args.out_dir
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, ValueError, OSError) as exc:
        print(json.dumps({"error": "invalid_input", "message": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    (out / "config.json").write_text(config.dumps())
    (out / "error.json").unlink(missing_ok=True)
    try:
        result = args.handler(args, config, out)
    except _RuntimeFailure as exc:
        _write_json(out / "error.json", exc.payload)
        print(json.dumps(exc.payload))
        return EXIT_RUNTIME
    except Exception as exc:  # report anything else as a runtime failure
        log.debug("unhandled failure", exc_info=True)
        payload = {"error": type(exc).__name__, "message": str(exc)}
        _write_json(out / "error.json", payload)
        print(json.dumps(payload))
        return EXIT_RUNTIME
    print(json.dumps(_brief(result), sort_keys=True))
    return EXIT_OK


def _brief(result: dict) -> dict:
    return {k: v for k, v in result.items() if k != "config"}


if __name__ == "__main__":
    sys.exit(main())
