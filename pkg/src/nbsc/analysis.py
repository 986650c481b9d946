"""Model-fit tests, forecasting baselines and robustness analyses."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, special

from . import economics as ec
from .demand import DemandParams
from .engine import SimulationConfig, evaluate_scenario, simulate_demand
from .errors import ConvergenceError, DomainError, LengthError, SingularDesignError
from .estimation import as_counts, nb_mle, nb_regression, poisson_mle, poisson_regression

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Model fit
# --------------------------------------------------------------------------

def aic(log_likelihood: float, k: int) -> float:
    return 2.0 * k - 2.0 * log_likelihood


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square law via the regularized upper incomplete gamma."""
    if df <= 0:
        raise DomainError("df must be positive")
    if x < 0:
        raise DomainError("x must be non-negative")
    if x == 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def likelihood_ratio_test(ll_null: float, ll_alt: float, df: int = 1) -> tuple[float, float]:
    stat = max(0.0, 2.0 * (ll_alt - ll_null))
    return stat, chi2_sf(stat, df)


@dataclass(frozen=True)
class ModelFitReport:
    n: int
    poisson_lambda: float
    poisson_ll: float
    nb_r: float
    nb_p: float
    nb_ll: float
    nb_converged: bool
    poisson_aic: float
    nb_aic: float
    overdispersion_index_empirical: float
    overdispersed: bool
    lrt_statistic: float
    lrt_p_value: float
    lrt_p_value_boundary: float
    degenerate: bool
    notes: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def model_fit_report(series, k_poisson: int = 1, k_nb: int = 2,
                     paper_compat: bool = False) -> ModelFitReport:
    """Poisson vs. NB comparison: log-likelihoods, AIC, LRT and empirical dispersion.

    ``paper_compat`` counts one extra parameter per model (2 and 3).  When the
    NB likelihood has no interior maximum (no overdispersion), the NB fit is
    its Poisson limit and the report is flagged degenerate.
    """
    if paper_compat:
        k_poisson, k_nb = 2, 3
    y = as_counts(series)
    lam, ll_pois = poisson_mle(y)
    mean = float(y.mean())
    var = float(y.var(ddof=1)) if y.size > 1 else 0.0
    od = var / mean if mean > 0 else math.nan
    notes = []
    try:
        fit = nb_mle(y)
        r, p, ll_nb, converged, degenerate = fit.r_hat, fit.p_hat, fit.log_likelihood, True, False
    except ConvergenceError as exc:
        notes.append(f"NB fit at Poisson boundary: {exc}")
        r, p, ll_nb, converged, degenerate = math.inf, 1.0, ll_pois, False, True
    if var == 0:
        notes.append("zero sample variance")
        degenerate = True
    stat, pval = likelihood_ratio_test(ll_pois, ll_nb, 1)
    return ModelFitReport(
        n=int(y.size), poisson_lambda=lam, poisson_ll=ll_pois, nb_r=r, nb_p=p, nb_ll=ll_nb,
        nb_converged=converged, poisson_aic=aic(ll_pois, k_poisson), nb_aic=aic(ll_nb, k_nb),
        overdispersion_index_empirical=od, overdispersed=bool(od > 1),
        lrt_statistic=stat, lrt_p_value=pval,
        lrt_p_value_boundary=0.5 * pval if stat > 0 else 1.0,
        degenerate=degenerate, notes=tuple(notes))


# --------------------------------------------------------------------------
# Forecasting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ForecastScore:
    mae: float
    rmse: float
    mape: float  # NaN when every actual is zero
    mape_excluded: int
    n: int


def forecast_scores(actual, predicted) -> ForecastScore:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("actual and predicted must be equal-length non-empty vectors")
    err = a - p
    mae = float(np.mean(np.abs(err)))
    rmse = float(math.sqrt(np.mean(err * err)))
    nz = a != 0
    excluded = int(a.size - np.count_nonzero(nz))
    if excluded:
        log.info("MAPE skips %d zero actuals", excluded)
    mape = float(np.mean(100.0 * np.abs(err[nz]) / np.abs(a[nz]))) if nz.any() else math.nan
    return ForecastScore(mae, rmse, mape, excluded, int(a.size))


def ets_level(series, smoothing: float) -> float:
    y = as_counts(series)
    if y.size == 0:
        raise LengthError("series is empty")
    if not 0 < smoothing <= 1:
        raise DomainError("smoothing must lie in (0, 1]")
    level = y[0]
    for v in y[1:]:
        level = smoothing * v + (1 - smoothing) * level
    return float(level)


def ets_forecast(series, smoothing: float, horizon: int) -> np.ndarray:
    """Simple exponential smoothing: flat forecast at the final level."""
    return np.full(horizon, ets_level(series, smoothing))


def fit_ets_smoothing(series) -> float:
    """Smoothing weight minimizing in-sample one-step squared error."""
    y = as_counts(series)
    if y.size < 3:
        return 1.0

    def sse(s):
        level, total = y[0], 0.0
        for v in y[1:]:
            total += (v - level) ** 2
            level = s * v + (1 - s) * level
        return total

    res = optimize.minimize_scalar(sse, bounds=(0.01, 1.0), method="bounded",
                                   options={"xatol": 1e-6})
    return float(res.x)


def regression_forecast(series, model: str = "nb", horizon: int = 1) -> np.ndarray:
    """Count regression of ``y_t`` on ``(1, y_{t-1})`` iterated forward from the last value.

    A constant lagged regressor makes the slope unidentifiable; the fit then
    falls back to the intercept-only model.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if horizon == 0:
        return np.empty(0)
    y = as_counts(series)
    if y.size < 4:
        raise LengthError("need at least four observations")
    fit_fn = {"nb": nb_regression, "poisson": poisson_regression}[model]
    if y.sum() == 0:
        return np.zeros(horizon)
    target, lag = y[1:], y[:-1]
    x = np.column_stack([np.ones(lag.size), lag])
    try:
        beta = fit_fn(target, x).coefficients
    except SingularDesignError:
        beta = np.array([fit_fn(target, np.ones((target.size, 1))).coefficients[0], 0.0])
    out = np.empty(horizon)
    last = y[-1]
    for h in range(horizon):
        last = math.exp(beta[0] + beta[1] * last)
        out[h] = last
    return out


FORECAST_MODELS = ("ets", "mean", "poisson", "nb")
MODEL_LABELS = {
    "ets": "Exponential Smoothing (ETS)",
    "mean": "Historical Mean",
    "poisson": "Poisson Regression",
    "nb": "Negative Binomial Regression",
}


def forecast(model: str, train, horizon: int) -> np.ndarray:
    if model == "ets":
        return ets_forecast(train, fit_ets_smoothing(train), horizon)
    if model == "mean":
        return np.full(horizon, float(as_counts(train).mean()))
    if model in ("poisson", "nb"):
        return regression_forecast(train, model, horizon)
    raise ValueError(f"unknown forecasting model {model!r}")


def rolling_holdout(series, models=FORECAST_MODELS, holdout_length: int = 12):
    """Fit each model on the same prefix and score it on the final ``holdout_length`` points.

    Returns ``(scores, predictions)``: model -> ForecastScore and model -> forecast vector.
    """
    y = as_counts(series)
    if holdout_length < 1:
        raise ValueError("holdout_length must be positive")
    if holdout_length >= y.size:
        raise LengthError("holdout leaves no training data")
    train, test = y[:-holdout_length], y[-holdout_length:]
    scores, preds = {}, {}
    for m in models:
        preds[m] = forecast(m, train, holdout_length)
        scores[m] = forecast_scores(test, preds[m])
    return scores, preds


# --------------------------------------------------------------------------
# Robustness
# --------------------------------------------------------------------------

def bootstrap_means(samples, resamples: int, rng: np.random.Generator,
                    chunk: int = 100) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("samples are empty")
    means = np.empty(resamples)
    for lo in range(0, resamples, chunk):
        hi = min(lo + chunk, resamples)
        idx = rng.integers(0, x.size, size=(hi - lo, x.size))
        means[lo:hi] = x[idx].mean(axis=1)
    return means


def bootstrap_ci(samples, resamples: int = 1000, level: float = 0.95,
                 rng: np.random.Generator | None = None, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    rng = np.random.default_rng(seed) if rng is None else rng
    means = bootstrap_means(samples, resamples, rng)
    tail = (1 - level) / 2
    lo, hi = np.quantile(means, [tail, 1 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class SeedSweep:
    rows: list[tuple[int, float, float]]  # (seed, expected_profit, fill_rate)
    spread: float  # (max - min) / |mean| of expected profit


def seed_sweep(seeds, scenario: ec.Scenario, demand_params: DemandParams, suppliers,
               econ: ec.EconomicParams, sim_cfg: SimulationConfig, *,
               threads: int | None = None) -> SeedSweep:
    rows = []
    for s in seeds:
        cfg = replace(sim_cfg, base_seed=int(s))
        res = evaluate_scenario(scenario, demand_params, suppliers, econ, cfg, threads=threads)
        rows.append((int(s), res.expected_profit, res.fill_rate))
    profits = np.array([r[1] for r in rows])
    centre = abs(float(profits.mean()))
    spread = float(np.ptp(profits) / centre) if centre > 0 else 0.0
    return SeedSweep(rows, spread)


TORNADO_PARAMETERS = ("r", "p", "kappa", "alpha", "a4")
TORNADO_LABELS = {
    "r": "Dispersion parameter (r)",
    "p": "Success probability (p)",
    "kappa": "Variance penalty (kappa)",
    "alpha": "Smart contract adoption (alpha)",
    "a4": "Revenue-sharing coefficient (A4)",
}


def _perturb(name, factor, scenario, demand_params, econ):
    if name == "r":
        return scenario, replace(demand_params, r=demand_params.r * factor), econ
    if name == "p":
        p0 = min(max(demand_params.p0 * factor, demand_params.p_floor), demand_params.p_ceil)
        return scenario, replace(demand_params, p0=p0), econ
    if name == "kappa":
        return scenario, demand_params, replace(econ, variance_weight=econ.variance_weight * factor)
    if name == "alpha":
        alpha = min(max(scenario.alpha * factor, 0.0), 1.0)
        return ec.Scenario(alpha, dict(scenario.quantities)), demand_params, econ
    if name == "a4":
        return scenario, demand_params, replace(econ, a4=econ.a4 * factor)
    raise ValueError(f"unknown tornado parameter {name!r}")


@dataclass(frozen=True)
class TornadoRow:
    parameter: str
    low: float
    high: float
    impact: float


def tornado(scenario: ec.Scenario, demand_params: DemandParams, suppliers,
            econ: ec.EconomicParams, sim_cfg: SimulationConfig, *, delta: float = 0.10,
            parameters=TORNADO_PARAMETERS, target: str = "objective",
            threads: int | None = None) -> list[TornadoRow]:
    """One-at-a-time ``+-delta`` relative perturbations ranked by impact on the target.

    Every evaluation reuses the baseline random stream, so a parameter that does
    not move the demand law (kappa, alpha, a4) changes the target through its
    own term only.
    """
    attr = "objective_value" if target == "objective" else "expected_profit"
    if target not in ("objective", "expected_profit"):
        raise ValueError("target must be 'objective' or 'expected_profit'")

    def value(s, dp, e):
        demand = simulate_demand(dp, sim_cfg, 0, threads)
        return getattr(evaluate_scenario(s, dp, suppliers, e, sim_cfg, demand=demand), attr)

    base = value(scenario, demand_params, econ)
    rows = []
    for name in parameters:
        lo = value(*_perturb(name, 1 - delta, scenario, demand_params, econ)) - base
        hi = value(*_perturb(name, 1 + delta, scenario, demand_params, econ)) - base
        rows.append(TornadoRow(name, lo, hi, max(abs(lo), abs(hi))))
    rows.sort(key=lambda r: (-r.impact, r.parameter))
    return rows
