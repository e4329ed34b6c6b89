"""
JSON run configuration shared by the command-line tools.

A run file has one object per section. Dimensional quantities carry their
unit in the key name (``u_max_mN``, ``dr_max_km``, ``tau_kms2``); keys
without a unit suffix are nondimensional. Unknown sections or keys are
rejected so that typos cannot silently fall back to defaults.

The defaults reproduce the reference tuning (35-stage horizon, 0.01 rad
step, 2000 mN thrust bound, 10 t spacecraft) with a circular plant.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dynamics import LENGTH_UNIT_KM, TIME_UNIT_S, ThreeBodyParams, thrust_mN_to_nondim
from .ocp import OcpConfig, table1_weights
from .qpsolver import QpSolverConfig
from .sim import HypercubeSpec, SimConfig

CONFIG_VERSION = "halonmpc-run v1"


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _table1_q():
    return table1_weights()[0].tolist()


def _table1_r():
    return table1_weights()[1].tolist()


@dataclass(frozen=True)
class ModelSection:
    mu: float = 0.012
    e: float = 0.0
    mass_kg: float = 10_000.0
    length_unit_km: float = LENGTH_UNIT_KM
    time_unit_s: float = TIME_UNIT_S


@dataclass(frozen=True)
class OrbitSection:
    x0: float = 0.9878
    z0_guess: float = 0.0290
    ydot0_guess: float = 0.8763
    tol: float = 1e-10
    max_iter: int = 50
    shooting_step: float = 2.5e-4
    shift: bool = True
    fit_grid: bool = True
    family: list | None = None


@dataclass(frozen=True)
class OcpSection:
    N: int = 35
    dtheta_rad: float = 0.01
    Q: list = field(default_factory=_table1_q)
    R: list = field(default_factory=_table1_r)
    u_max_mN: float = 2000.0


@dataclass(frozen=True)
class QpSection:
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


@dataclass(frozen=True)
class SimSection:
    ell: int = 3
    tau_kms2: float = 1e-10
    revolutions: float = 1.0
    seed: int = 0
    substeps: int = 10
    initial_state: list | None = None
    shift_warmstart: bool = False
    record_timing: bool = True


@dataclass(frozen=True)
class MonteCarloSection:
    samples: int = 10
    dr_max_km: float = 500.0
    dv_max_kms: float = 0.01
    revolutions: float = 2.0
    center: list | None = None
    converged_km: float = 10.0


@dataclass(frozen=True)
class SweepSection:
    ell_values: list = field(default_factory=lambda: list(range(1, 11)))
    revolutions: float = 5.0


_SECTIONS = {
    "model": ModelSection,
    "orbit": OrbitSection,
    "ocp": OcpSection,
    "qp": QpSection,
    "sim": SimSection,
    "montecarlo": MonteCarloSection,
    "sweep": SweepSection,
}


def _coerce(section: str, f, value):
    """Check a JSON value against the dataclass field's default type."""
    where = f"{section}.{f.name}"
    default = f.default if f.default_factory is MISSING else f.default_factory()
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or float(value) != int(value):
            raise ConfigError(f"{where} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        if not math.isfinite(value):
            raise ConfigError(f"{where} must be finite")
        return float(value)
    # list-valued or optional list
    if value is None:
        if default is not None:
            raise ConfigError(f"{where} may not be null")
        return None
    if not isinstance(value, list):
        raise ConfigError(f"{where} must be a list")
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must contain numbers") from exc
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where} must contain finite numbers")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one command invocation."""

    model: ModelSection = field(default_factory=ModelSection)
    orbit: OrbitSection = field(default_factory=OrbitSection)
    ocp: OcpSection = field(default_factory=OcpSection)
    qp: QpSection = field(default_factory=QpSection)
    sim: SimSection = field(default_factory=SimSection)
    montecarlo: MonteCarloSection = field(default_factory=MonteCarloSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    # ------------------------------------------------------------------
    # (de)serialization

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run configuration must be a JSON object")
        data = dict(data)
        version = data.pop("format", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported configuration format {version!r}")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        sections = {}
        for name, kind in _SECTIONS.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"section {name!r} must be an object")
            known = {f.name: f for f in fields(kind)}
            bad = set(raw) - set(known)
            if bad:
                raise ConfigError(f"unknown key(s) in {name}: {', '.join(sorted(bad))}")
            sections[name] = kind(**{k: _coerce(name, known[k], v) for k, v in raw.items()})
        config = cls(**sections)
        config.validate()
        return config

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {"format": CONFIG_VERSION}
        out.update({name: asdict(getattr(self, name)) for name in _SECTIONS})
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with ``section={key: value}`` overrides applied and validated."""
        data = self.to_dict()
        for name, values in sections.items():
            data[name].update({k: v for k, v in values.items() if v is not None})
        return RunConfig.from_dict(data)

    # ------------------------------------------------------------------
    # validation and construction of library objects

    def validate(self):
        """Build every library object once so that bad values fail early."""
        try:
            params = self.params()
            self.ocp_config(params, self.ocp.dtheta_rad)
            self.qp_config()
            self.hypercube()
            self.sim_config(None, self.ocp.dtheta_rad)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        o = self.orbit
        if not (o.tol > 0.0 and o.max_iter >= 1 and o.shooting_step > 0.0):
            raise ConfigError("orbit.tol, orbit.max_iter and orbit.shooting_step must be positive")
        if o.family is not None and (len(o.family) == 0 or np.ndim(o.family) != 1):
            raise ConfigError("orbit.family must be a non-empty list of x0 values")
        if self.sim.initial_state is not None and np.shape(self.sim.initial_state) != (6,):
            raise ConfigError("sim.initial_state must have 6 entries")
        if self.montecarlo.center is not None and np.shape(self.montecarlo.center) != (6,):
            raise ConfigError("montecarlo.center must have 6 entries")
        if not self.montecarlo.revolutions > 0.0 or not self.sweep.revolutions > 0.0:
            raise ConfigError("revolution counts must be positive")
        if not self.montecarlo.converged_km > 0.0:
            raise ConfigError("montecarlo.converged_km must be positive")
        if any(int(v) != v or v < 1 for v in self.sweep.ell_values):
            raise ConfigError("sweep.ell_values must be integers >= 1")

    def params(self) -> ThreeBodyParams:
        m = self.model
        return ThreeBodyParams(mu=m.mu, e=m.e, length_unit_km=m.length_unit_km,
                               time_unit_s=m.time_unit_s, mass_kg=m.mass_kg)

    def ocp_config(self, params: ThreeBodyParams, dtheta: float) -> OcpConfig:
        """Controller data on the grid step ``dtheta`` actually used by the reference."""
        c = self.ocp
        return OcpConfig(c.N, np.array(c.Q, dtype=float), np.array(c.R, dtype=float),
                         float(thrust_mN_to_nondim(c.u_max_mN, params)), dtheta, params.mu)

    def qp_config(self, verbose: bool = False) -> QpSolverConfig:
        return QpSolverConfig(**asdict(self.qp), verbose=verbose)

    def sim_config(self, revolutions: float | None, dtheta: float) -> SimConfig:
        s = self.sim
        params = self.params()
        return SimConfig(
            params=params, ocp=self.ocp_config(params, dtheta), ell=s.ell,
            qp=self.qp_config(), tau_kms2=s.tau_kms2,
            revolutions=s.revolutions if revolutions is None else revolutions,
            seed=s.seed, substeps=s.substeps,
            initial_state=tuple(s.initial_state) if s.initial_state is not None else None,
            shift_warmstart=s.shift_warmstart, record_timing=s.record_timing)

    def hypercube(self) -> HypercubeSpec:
        m = self.montecarlo
        return HypercubeSpec(tuple(m.center) if m.center is not None else None,
                             m.dr_max_km, m.dv_max_kms, m.samples)


def default_config() -> RunConfig:
    return RunConfig()

