"""Negative Binomial demand modelling and smart-contract procurement optimization."""

from .demand import (
    DemandParams,
    DemandPath,
    nb_cdf,
    nb_moments,
    nb_pmf,
    overdispersion_index,
    sample_demand,
    sample_path,
    step_p,
)
from .economics import EconomicParams, Scenario, Supplier
from .engine import (
    OptimalPolicy,
    ScenarioResult,
    SimulationConfig,
    evaluate_scenario,
    grid_search,
)
from .rng import replication_seed

__all__ = [
    "DemandParams",
    "DemandPath",
    "EconomicParams",
    "OptimalPolicy",
    "Scenario",
    "ScenarioResult",
    "SimulationConfig",
    "Supplier",
    "evaluate_scenario",
    "grid_search",
    "nb_cdf",
    "nb_moments",
    "nb_pmf",
    "overdispersion_index",
    "replication_seed",
    "sample_demand",
    "sample_path",
    "step_p",
]

__version__ = "0.1.0"
