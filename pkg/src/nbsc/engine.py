"""Monte Carlo scenario evaluation and simulation-based grid search.

Demand draws are a function of ``(base_seed, stream key, replication index)``
only.  With common random numbers (the default) every grid point shares one
stream, so the demand sample is generated once and reused; differences between
scenarios then come from the decisions alone.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import economics as ec
from .demand import UNIFORMS_PER_PERIOD, DemandParams, nb_moments, paths_from_uniforms
from .errors import ConfigError, InfeasibleScenarioError, NoFeasiblePointError
from .rng import counter_uniforms, replication_seeds

SAMPLERS = ("rqmc", "mc")
CRITERIA = ("objective", "expected_profit")
CHUNK = 2048
TIE_TOL = 1e-9
SOBOL_BITS = 30


@dataclass(frozen=True)
class SimulationConfig:
    replications: int = 10_000
    base_seed: int = 0
    horizon: int = 1
    alpha_step: float = 0.05
    q_grid: tuple[int, ...] | dict[str, tuple[int, ...]] = tuple(range(0, 25, 2))
    common_random_numbers: bool = True
    # "rqmc": scrambled Sobol points; "mc": independent counter-based streams.
    sampler: str = "rqmc"
    criterion: str = "objective"

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed must be an unsigned 64-bit integer")
        if not 0 < self.alpha_step <= 1:
            raise ConfigError("alpha_step must lie in (0, 1]")
        steps = 1.0 / self.alpha_step
        if abs(steps - round(steps)) > 1e-12 * steps:
            raise ConfigError("alpha_step must divide 1")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}")

    def alpha_grid(self) -> list[float]:
        n = round(1.0 / self.alpha_step)
        return [round(i / n, 12) for i in range(n + 1)]

    def quantity_grids(self, suppliers) -> dict[str, tuple[int, ...]]:
        if isinstance(self.q_grid, dict):
            missing = {s.id for s in suppliers} - set(self.q_grid)
            if missing:
                raise ConfigError(f"q_grid lacks suppliers {sorted(missing)}")
            return {s.id: tuple(self.q_grid[s.id]) for s in suppliers}
        return {s.id: tuple(self.q_grid) for s in suppliers}


@dataclass(frozen=True)
class DemandSample:
    probabilities: np.ndarray  # (M, H)
    draws: np.ndarray  # (M, H)

    @property
    def totals(self) -> np.ndarray:
        return self.draws.sum(axis=1)

    @property
    def replications(self) -> int:
        return self.draws.shape[0]

    @classmethod
    def fixed(cls, draws, p=np.nan) -> "DemandSample":
        """Wrap an externally supplied demand sample (one row per replication)."""
        d = np.asarray(draws, dtype=np.int64)
        if d.ndim == 1:
            d = d[:, None]
        if np.any(d < 0):
            raise ValueError("demand must be non-negative")
        return cls(np.full(d.shape, p, dtype=float), d)


@dataclass(frozen=True)
class ScenarioResult:
    expected_profit: float
    profit_std: float
    profit_variance: float
    fill_rate: float
    stockout_prob: float
    demand_variance: float
    demand_variance_analytic: float
    objective_value: float
    component_means: dict[str, float]
    penalties: dict[str, float]
    replications: int

    def as_dict(self) -> dict:
        return {
            "expected_profit": self.expected_profit,
            "profit_std": self.profit_std,
            "profit_variance": self.profit_variance,
            "fill_rate": self.fill_rate,
            "stockout_prob": self.stockout_prob,
            "demand_variance": self.demand_variance,
            "demand_variance_analytic": self.demand_variance_analytic,
            "objective_value": self.objective_value,
            "component_means": dict(self.component_means),
            "penalties": dict(self.penalties),
            "replications": self.replications,
        }


@dataclass(frozen=True)
class GridPoint:
    index: int
    scenario: ec.Scenario
    result: ScenarioResult


@dataclass(frozen=True)
class OptimalPolicy:
    scenario: ec.Scenario
    result: ScenarioResult
    grid_size: int
    ties_broken: int
    points: list[GridPoint] = field(default_factory=list, repr=False)
    infeasible: int = 0


def _resolve_threads(threads: int | None) -> int:
    return max(1, int(threads or 1))


def _chunked(n: int, size: int = CHUNK):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _uniforms(sim_cfg: SimulationConfig, stream: int, width: int) -> np.ndarray:
    m = sim_cfg.replications
    if sim_cfg.sampler == "rqmc":
        # Point m of a scrambled Sobol sequence is fixed by the stream's scramble seed.
        engine = qmc.Sobol(d=width, scramble=True, bits=SOBOL_BITS,
                           seed=np.random.default_rng([sim_cfg.base_seed, stream]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            u = engine.random(m)
        return u + 0.5 / 2**SOBOL_BITS
    seeds = replication_seeds(sim_cfg.base_seed, stream, np.arange(m))
    return counter_uniforms(seeds, width)


def simulate_demand(params: DemandParams, sim_cfg: SimulationConfig, stream: int = 0,
                    threads: int | None = None) -> DemandSample:
    """Draw ``M`` demand paths for one random stream.

    Work is split into fixed-size replication chunks; since every replication's
    uniforms are fixed in advance, the result is identical for any ``threads``.
    """
    width = UNIFORMS_PER_PERIOD * sim_cfg.horizon
    u = _uniforms(sim_cfg, stream, width)
    spans = _chunked(sim_cfg.replications)

    def work(span):
        lo, hi = span
        return paths_from_uniforms(params, u[lo:hi])

    n_threads = _resolve_threads(threads)
    if n_threads == 1 or len(spans) == 1:
        parts = [work(s) for s in spans]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(work, spans))
    probs = np.concatenate([p for p, _ in parts])
    draws = np.concatenate([d for _, d in parts])
    return DemandSample(probs, draws)


def _stream_key(sim_cfg: SimulationConfig, scenario_index: int) -> int:
    return 0 if sim_cfg.common_random_numbers else scenario_index


def score_scenario(scenario: ec.Scenario, demand: DemandSample, suppliers,
                   econ: ec.EconomicParams, sim_cfg: SimulationConfig,
                   demand_params: DemandParams | None = None) -> ScenarioResult:
    """Aggregate profit, service and penalty metrics of a scenario over a demand sample."""
    if not ec.budget_check(scenario, suppliers, econ):
        raise InfeasibleScenarioError(f"scenario {scenario} exceeds the budget")
    q = scenario.total_quantity
    out = ec.inventory_outcomes(q, demand.draws)
    m = demand.replications
    procurement = ec.procurement_cost(scenario, suppliers, econ)
    adoption = ec.adoption_cost(scenario.alpha, econ)
    revenue = econ.unit_price * out["sold"]
    salvage = econ.salvage_value * out["leftover"]
    stockout = econ.stockout_penalty * out["short"]
    holding = econ.holding_cost * out["held"]
    profit = revenue + salvage - stockout - holding - procurement - adoption

    expected = float(np.mean(profit))
    pvar = float(np.var(profit, ddof=1)) if m > 1 else 0.0
    totals = demand.totals
    fulfilled = int(np.count_nonzero(totals <= q))
    fill = fulfilled / m
    stockout_prob = (m - fulfilled) / m
    dvar = float(np.var(totals, ddof=1)) if m > 1 else 0.0
    if demand_params is not None and sim_cfg.horizon == 1:
        analytic = nb_moments(demand_params.r, demand_params.p0)[1]
    else:
        analytic = math.nan

    penalties = {
        "variance": ec.variance_penalty(dvar, econ),
        "risk": ec.risk_penalty(stockout_prob, econ),
        "fillrate": ec.fillrate_penalty(fill, econ),
    }
    objective = expected - penalties["variance"] - penalties["risk"] - penalties["fillrate"]
    components = {
        "revenue": float(np.mean(revenue)),
        "salvage": float(np.mean(salvage)),
        "stockout": float(np.mean(stockout)),
        "holding": float(np.mean(holding)),
        "procurement": float(procurement),
        "adoption": float(adoption),
    }
    return ScenarioResult(
        expected_profit=expected,
        profit_std=math.sqrt(pvar),
        profit_variance=pvar,
        fill_rate=fill,
        stockout_prob=stockout_prob,
        demand_variance=dvar,
        demand_variance_analytic=analytic,
        objective_value=objective,
        component_means=components,
        penalties=penalties,
        replications=m,
    )


def evaluate_scenario(scenario: ec.Scenario, demand_params: DemandParams, suppliers,
                      econ: ec.EconomicParams, sim_cfg: SimulationConfig, *,
                      scenario_index: int = 0, threads: int | None = None,
                      demand: DemandSample | None = None) -> ScenarioResult:
    """Run ``M`` replications of a scenario (or score a supplied demand sample)."""
    if not ec.budget_check(scenario, suppliers, econ):
        raise InfeasibleScenarioError(f"scenario {scenario} exceeds the budget")
    if demand is None:
        demand = simulate_demand(demand_params, sim_cfg, _stream_key(sim_cfg, scenario_index),
                                 threads)
    return score_scenario(scenario, demand, suppliers, econ, sim_cfg, demand_params)


def build_grid(alphas, quantity_grids: dict[str, tuple[int, ...]]) -> list[ec.Scenario]:
    """Cartesian product of adoption levels and per-supplier quantities, in a fixed order."""
    ids = sorted(quantity_grids)
    combos = list(itertools.product(*(sorted(set(quantity_grids[i])) for i in ids)))
    return [ec.Scenario(float(a), dict(zip(ids, (int(q) for q in combo))))
            for a in alphas for combo in combos]


def criterion_value(result: ScenarioResult, criterion: str) -> float:
    return result.objective_value if criterion == "objective" else result.expected_profit


def select_optimum(points: list[GridPoint], criterion: str = "objective",
                   tol: float = TIE_TOL) -> tuple[GridPoint, int]:
    """Maximizer of the criterion with ties (within ``tol``) broken by higher fill
    rate, then smaller alpha, then smaller total quantity, then the quantity vector."""
    if not points:
        raise NoFeasiblePointError("no feasible grid point")
    best = max(criterion_value(p.result, criterion) for p in points)
    tied = [p for p in points if criterion_value(p.result, criterion) >= best - tol]

    def key(p: GridPoint):
        s = p.scenario
        return (-p.result.fill_rate, s.alpha, s.total_quantity,
                tuple(s.quantities[k] for k in sorted(s.quantities)))

    return min(tied, key=key), len(tied) - 1


def evaluate_grid(scenarios: list[ec.Scenario], demand_params: DemandParams, suppliers,
                  econ: ec.EconomicParams, sim_cfg: SimulationConfig, *,
                  threads: int | None = None,
                  demand: DemandSample | None = None) -> tuple[list[GridPoint], int]:
    """Score every feasible scenario; returns the points and the infeasible count."""
    feasible = [(i, s) for i, s in enumerate(scenarios) if ec.budget_check(s, suppliers, econ)]
    n_threads = _resolve_threads(threads)
    shared = demand
    if shared is None and sim_cfg.common_random_numbers:
        shared = simulate_demand(demand_params, sim_cfg, 0, n_threads)

    def work(item):
        i, s = item
        d = shared if shared is not None else simulate_demand(demand_params, sim_cfg, i)
        return GridPoint(i, s, score_scenario(s, d, suppliers, econ, sim_cfg, demand_params))

    if n_threads == 1:
        points = [work(it) for it in feasible]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            points = list(pool.map(work, feasible))
    return points, len(scenarios) - len(feasible)


def grid_search(alphas, quantity_grids: dict[str, tuple[int, ...]], demand_params: DemandParams,
                suppliers, econ: ec.EconomicParams, sim_cfg: SimulationConfig, *,
                threads: int | None = None,
                demand: DemandSample | None = None) -> OptimalPolicy:
    scenarios = build_grid(alphas, quantity_grids)
    if not scenarios:
        raise NoFeasiblePointError("empty grid")
    points, infeasible = evaluate_grid(scenarios, demand_params, suppliers, econ, sim_cfg,
                                       threads=threads, demand=demand)
    if not points:
        raise NoFeasiblePointError(
            f"none of the {len(scenarios)} grid points satisfies the budget {econ.budget}")
    best, ties = select_optimum(points, sim_cfg.criterion)
    return OptimalPolicy(best.scenario, best.result, len(points), ties, points, infeasible)


def adoption_sweep(alphas, quantities: dict[str, int], demand_params: DemandParams, suppliers,
                   econ: ec.EconomicParams, sim_cfg: SimulationConfig, *,
                   threads: int | None = None) -> list[tuple[float, float]]:
    """Expected profit at each adoption level for fixed order quantities (shared draws)."""
    demand = simulate_demand(demand_params, sim_cfg, 0, threads)
    rows = []
    for a in alphas:
        res = evaluate_scenario(ec.Scenario(float(a), dict(quantities)), demand_params,
                                suppliers, econ, sim_cfg, demand=demand)
        rows.append((float(a), res.expected_profit))
    return rows


def fill_rate_curve(quantities, demand_params: DemandParams, sim_cfg: SimulationConfig, *,
                    threads: int | None = None) -> list[tuple[int, float]]:
    """Simulated ``P(total demand <= Q)`` for each total quantity."""
    totals = simulate_demand(demand_params, sim_cfg, 0, threads).totals
    return [(int(q), float(np.count_nonzero(totals <= q) / totals.size)) for q in quantities]
