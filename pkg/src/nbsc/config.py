"""JSON run configuration with strict key checking.

Defaults follow the calibrated baseline: r=4.5, p=0.3, rho=0.6, h=2, r_p=15,
kappa=2, gamma=5, lambda=2, tau=0.90 and cost-reduction coefficients 5/3/3/4.
Every monetary value is in USD.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .demand import DemandParams
from .economics import EconomicParams, Supplier
from .engine import SimulationConfig
from .errors import ConfigError, NbscError

SCHEMA_VERSION = 1

DEFAULT_SUPPLIERS = (
    Supplier("S1", base_cost=15.0, readiness=0.8),
    Supplier("S2", base_cost=16.0, readiness=0.4),
)


@dataclass(frozen=True)
class GridSpec:
    alphas: tuple[float, ...] | None = None  # None: derived from simulation.alpha_step
    quantities: dict[str, tuple[int, ...]] | None = None  # None: simulation.q_grid


@dataclass(frozen=True)
class SensitivitySpec:
    scenario_alpha: float = 0.5
    scenario_quantities: dict[str, int] = field(default_factory=lambda: {"S1": 8, "S2": 6})
    seeds: tuple[int, ...] = (0, 42, 99, 1234, 2023)
    delta: float = 0.10
    tornado_target: str = "objective"
    sweep_alphas: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    bootstrap_resamples: int = 1000
    bootstrap_level: float = 0.95


@dataclass(frozen=True)
class RunConfig:
    demand: DemandParams = field(default_factory=lambda: DemandParams(r=4.5, p0=0.3))
    economics: EconomicParams = field(default_factory=EconomicParams)
    suppliers: tuple[Supplier, ...] = DEFAULT_SUPPLIERS
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    grids: GridSpec = field(default_factory=GridSpec)
    sensitivity: SensitivitySpec = field(default_factory=SensitivitySpec)
    io: dict[str, str] = field(default_factory=dict)

    def alphas(self) -> list[float]:
        if self.grids.alphas is not None:
            return [float(a) for a in self.grids.alphas]
        return self.simulation.alpha_grid()

    def quantity_grids(self) -> dict[str, tuple[int, ...]]:
        if self.grids.quantities is not None:
            return {s.id: tuple(int(q) for q in self.grids.quantities[s.id])
                    for s in self.suppliers}
        return self.simulation.quantity_grids(self.suppliers)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["suppliers"] = [asdict(s) for s in self.suppliers]
        d["schema_version"] = SCHEMA_VERSION
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, NbscError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


def _range_or_list(spec, section):
    """A quantity grid is a list of ints or {"min", "max", "step"}."""
    if isinstance(spec, dict):
        if set(spec) != {"min", "max", "step"}:
            raise ConfigError(f"{section}: range grid needs exactly min, max, step")
        lo, hi, step = (int(spec[k]) for k in ("min", "max", "step"))
        if step <= 0 or hi < lo:
            raise ConfigError(f"{section}: invalid range")
        return tuple(range(lo, hi + 1, step))
    if isinstance(spec, list) and all(isinstance(q, int) and q >= 0 for q in spec):
        return tuple(spec)
    raise ConfigError(f"{section}: quantities must be non-negative integers")


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    allowed = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {}
    if "demand" in data:
        kw["demand"] = _build(DemandParams, data["demand"], "demand")
    if "economics" in data:
        kw["economics"] = _build(EconomicParams, data["economics"], "economics")
    if "suppliers" in data:
        if not isinstance(data["suppliers"], list) or not data["suppliers"]:
            raise ConfigError("suppliers must be a non-empty list")
        sups = tuple(_build(Supplier, s, "suppliers") for s in data["suppliers"])
        if len({s.id for s in sups}) != len(sups):
            raise ConfigError("supplier ids must be unique")
        kw["suppliers"] = sups
    suppliers = kw.get("suppliers", DEFAULT_SUPPLIERS)
    if "simulation" in data:
        sim = dict(data["simulation"]) if isinstance(data["simulation"], dict) else data["simulation"]
        if isinstance(sim, dict) and "q_grid" in sim:
            q = sim["q_grid"]
            if isinstance(q, dict) and set(q) != {"min", "max", "step"}:
                sim["q_grid"] = {k: _range_or_list(v, f"simulation.q_grid.{k}") for k, v in q.items()}
            else:
                sim["q_grid"] = _range_or_list(q, "simulation.q_grid")
        kw["simulation"] = _build(SimulationConfig, sim, "simulation")
    if "grids" in data:
        g = data["grids"]
        if not isinstance(g, dict):
            raise ConfigError("grids must be an object")
        g = dict(g)
        if g.get("quantities") is not None:
            qs = g["quantities"]
            if not isinstance(qs, dict):
                raise ConfigError("grids.quantities must map supplier id to a grid")
            g["quantities"] = {k: _range_or_list(v, f"grids.quantities.{k}") for k, v in qs.items()}
            missing = {s.id for s in suppliers} - set(g["quantities"])
            if missing:
                raise ConfigError(f"grids.quantities lacks suppliers {sorted(missing)}")
        if g.get("alphas") is not None:
            if any(not 0 <= a <= 1 for a in g["alphas"]):
                raise ConfigError("grid alphas must lie in [0, 1]")
        kw["grids"] = _build(GridSpec, g, "grids")
    if "sensitivity" in data:
        kw["sensitivity"] = _build(SensitivitySpec, data["sensitivity"], "sensitivity")
    if "io" in data:
        if not isinstance(data["io"], dict):
            raise ConfigError("io must be an object")
        kw["io"] = dict(data["io"])
    cfg = RunConfig(**kw)
    sim_grid = cfg.simulation.q_grid
    if isinstance(sim_grid, dict):
        cfg.simulation.quantity_grids(cfg.suppliers)
    ids = {s.id for s in cfg.suppliers}
    if set(cfg.sensitivity.scenario_quantities) - ids:
        raise ConfigError("sensitivity.scenario_quantities references unknown suppliers")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)
