"""Command-line entry point: ``nbsc {ingest,fit,optimize,forecast,sensitivity}``.

Exit codes: 0 success, 2 input or validation error, 3 infeasibility or
convergence failure.  Outputs depend only on inputs, config and seed; the
thread count never changes a result.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, engine, estimation, ingest
from . import economics as ec
from .config import RunConfig, load_config
from .economics import Scenario
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    InfeasibleScenarioError,
    LengthError,
    NoFeasiblePointError,
    SchemaError,
)

log = logging.getLogger("nbsc")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("NBSC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"NBSC_THREADS must be an integer, got {env!r}") from None
    return 1


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    sim = cfg.simulation
    if args.seed is not None:
        sim = replace(sim, base_seed=args.seed)
    if args.replications is not None:
        sim = replace(sim, replications=args.replications)
    cfg = replace(cfg, simulation=sim)
    log.info("resolved config %s (seed=%d, replications=%d)", cfg.digest(),
             sim.base_seed, sim.replications)
    return cfg


def _read_series_file(path) -> ingest.MonthlyDemandSeries:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return ingest.read_series(fh)
    except (OSError, KeyError, ValueError) as exc:
        raise SchemaError(f"malformed series file {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    mapping = ingest.load_mapping(args.mapping) if args.mapping else None
    priority = tuple(args.date_priority.split(",")) if args.date_priority else ingest.DEFAULT_DATE_PRIORITY
    unknown = set(priority) - set(ingest.DATE_FORMATS)
    if unknown:
        raise ConfigError(f"unknown date format(s) {sorted(unknown)}")
    with open(args.input, encoding="utf-8", newline="") as fh:
        res = ingest.run_pipeline(fh, mapping, delimiter=args.delimiter, date_priority=priority)
    out = _out_dir(args)
    ingest.write_series(res.series, out / "monthly_series.csv")
    write_csv(out / "rejects.csv", ("line", "reason"), [(r.line, r.reason) for r in res.rejects])
    summary = {
        "summary": res.summary.as_dict(),
        "records_rejected": len(res.rejects),
        "prices_imputed": res.imputed,
        "prices_unavailable": res.unpriced,
        "quantities_capped": res.capped,
        "months": len(res.series),
        "warnings": res.warnings,
    }
    write_json(out / "summary.json", summary)
    for w in res.warnings:
        log.warning(w)
    return EXIT_OK


def fit_report(series) -> dict:
    y = estimation.as_counts(series)
    report: dict = {"n": int(y.size)}
    try:
        r, p = estimation.mom_estimate(y)
        report["mom"] = {"r": r, "p": p}
    except Exception as exc:  # equidispersion or too short
        report["mom"] = None
        report.setdefault("diagnostics", []).append(f"method of moments unavailable: {exc}")
    fit = analysis.model_fit_report(y)
    report["model_fit"] = fit.as_dict()
    report["model_fit_paper_compat_aic"] = {
        "poisson": analysis.aic(fit.poisson_ll, 2), "nb": analysis.aic(fit.nb_ll, 3)}
    if fit.degenerate:
        report.setdefault("diagnostics", []).append(
            "equidispersion: sample variance does not exceed the mean")
    try:
        p_series = estimation.reconstruct_p_series(y, window=min(12, y.size - 1))
        rho = estimation.estimate_rho(p_series)
        report["rho"] = {"rho": rho.rho, "raw": rho.raw, "window": min(12, y.size - 1)}
    except (LengthError, ValueError) as exc:
        report["rho"] = None
        report.setdefault("diagnostics", []).append(f"rho unavailable: {exc}")
    report["summary"] = ingest.dataset_summary(y).as_dict()
    return report


def cmd_fit(args) -> int:
    series = _read_series_file(args.series)
    if len(series) < 2:
        raise SchemaError("series needs at least two months")
    write_json(_out_dir(args) / "fit_report.json", fit_report(series))
    return EXIT_OK


def _scenario_dict(s: Scenario) -> dict:
    return {"alpha": s.alpha, "quantities": dict(sorted(s.quantities.items())),
            "total_quantity": s.total_quantity}


def cmd_optimize(args) -> int:
    cfg = _resolved_config(args)
    threads = _threads(args)
    grids = cfg.quantity_grids()
    policy = engine.grid_search(cfg.alphas(), grids, cfg.demand, cfg.suppliers, cfg.economics,
                                cfg.simulation, threads=threads)
    out = _out_dir(args)
    ids = sorted(grids)
    rows = []
    for pt in sorted(policy.points, key=lambda p: p.index):
        s, r = pt.scenario, pt.result
        rows.append([s.alpha, *(s.quantities[i] for i in ids), s.total_quantity,
                     r.expected_profit, r.profit_std, r.fill_rate, r.stockout_prob,
                     r.objective_value, int(pt.scenario == policy.scenario)])
    write_csv(out / "grid.csv", ["alpha", *(f"q_{i}" for i in ids), "Q", "expected_profit",
                                 "profit_std", "fill_rate", "stockout_prob", "objective",
                                 "optimal"], rows)
    totals = sorted({p.scenario.total_quantity for p in policy.points})
    curve = engine.fill_rate_curve(totals, cfg.demand, cfg.simulation, threads=threads)
    write_csv(out / "fill_rate_curve.csv", ["Q", "fill_rate"], curve)
    report = {
        "config_digest": cfg.digest(),
        "base_seed": cfg.simulation.base_seed,
        "replications": cfg.simulation.replications,
        "criterion": cfg.simulation.criterion,
        "sampler": cfg.simulation.sampler,
        "optimal": _scenario_dict(policy.scenario),
        "result": policy.result.as_dict(),
        "grid_size": policy.grid_size,
        "infeasible_points": policy.infeasible,
        "ties_broken": policy.ties_broken,
    }
    write_json(out / "optimal_policy.json", report)
    return EXIT_OK


def cmd_forecast(args) -> int:
    series = _read_series_file(args.series)
    if args.holdout >= len(series):
        raise LengthError(f"holdout {args.holdout} leaves no training data "
                          f"(series has {len(series)} months)")
    models = tuple(args.models.split(",")) if args.models else analysis.FORECAST_MODELS
    bad = set(models) - set(analysis.FORECAST_MODELS)
    if bad:
        raise ConfigError(f"unknown model(s) {sorted(bad)}")
    scores, preds = analysis.rolling_holdout(series, models, args.holdout)
    out = _out_dir(args)
    write_csv(out / "scores.csv", ("model", "MAE", "RMSE", "MAPE"),
              [(analysis.MODEL_LABELS[m], scores[m].mae, scores[m].rmse, scores[m].mape)
               for m in models])
    periods = series.periods[-args.holdout:]
    actual = series.counts[-args.holdout:]
    write_csv(out / "predictions.csv", ("period", "actual", *models),
              [(periods[i], int(actual[i]), *(float(preds[m][i]) for m in models))
               for i in range(args.holdout)])
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = _resolved_config(args)
    threads = _threads(args)
    sens = cfg.sensitivity
    delta = sens.delta if args.delta is None else args.delta
    scenario = Scenario(sens.scenario_alpha, dict(sens.scenario_quantities))
    common = (cfg.demand, cfg.suppliers, cfg.economics, cfg.simulation)
    out = _out_dir(args)

    rows = analysis.tornado(scenario, *common, delta=delta, target=sens.tornado_target,
                            threads=threads)
    write_csv(out / "tornado.csv", ("parameter", "label", "low_change", "high_change", "impact"),
              [(r.parameter, analysis.TORNADO_LABELS[r.parameter], r.low, r.high, r.impact)
               for r in rows])

    sweep = engine.adoption_sweep(sens.sweep_alphas, scenario.quantities, *common, threads=threads)
    write_csv(out / "adoption_curve.csv", ("alpha", "expected_profit"), sweep)

    seeds = analysis.seed_sweep(sens.seeds, scenario, *common, threads=threads)
    write_csv(out / "seed_sweep.csv", ("seed", "expected_profit", "fill_rate"), seeds.rows)

    demand = engine.simulate_demand(cfg.demand, cfg.simulation, 0, threads)
    profits, fulfilled = _replication_outcomes(scenario, demand, cfg)
    rng = np.random.default_rng([cfg.simulation.base_seed, 0xB007])
    ci_profit = analysis.bootstrap_ci(profits, sens.bootstrap_resamples, sens.bootstrap_level, rng)
    ci_fill = analysis.bootstrap_ci(fulfilled, sens.bootstrap_resamples, sens.bootstrap_level, rng)
    write_json(out / "bootstrap_ci.json", {
        "level": sens.bootstrap_level,
        "resamples": sens.bootstrap_resamples,
        "expected_profit": {"mean": float(np.mean(profits)), "lower": ci_profit[0],
                            "upper": ci_profit[1]},
        "fill_rate": {"mean": float(np.mean(fulfilled)), "lower": ci_fill[0],
                      "upper": ci_fill[1]},
        "seed_spread": seeds.spread,
        "config_digest": cfg.digest(),
    })
    return EXIT_OK


def _replication_outcomes(scenario: Scenario, demand: engine.DemandSample, cfg: RunConfig):
    """Per-replication profit and fulfilment indicator for bootstrap resampling."""
    econ = cfg.economics
    outcome = ec.inventory_outcomes(scenario.total_quantity, demand.draws)
    profit = (econ.unit_price * outcome["sold"] + econ.salvage_value * outcome["leftover"]
              - econ.stockout_penalty * outcome["short"] - econ.holding_cost * outcome["held"]
              - ec.procurement_cost(scenario, cfg.suppliers, econ)
              - ec.adoption_cost(scenario.alpha, econ))
    fulfilled = (demand.totals <= scenario.total_quantity).astype(float)
    return profit, fulfilled


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbsc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def runtime(p, config=True):
        if config:
            p.add_argument("--config", help="JSON run configuration (default: built-in baseline)")
            p.add_argument("--seed", type=_seed, help="override simulation.base_seed")
            p.add_argument("--replications", type=_positive, help="override replications")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=_positive,
                       help="worker threads (default $NBSC_THREADS or 1); never changes results")

    p = sub.add_parser("ingest", help="preprocess a transaction CSV into a monthly series")
    p.add_argument("input")
    p.add_argument("--mapping", help="JSON column mapping for nonstandard headers")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--date-priority", help="comma list from iso,us,eu,month")
    runtime(p, config=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit NB and Poisson models to a monthly series")
    p.add_argument("series")
    runtime(p, config=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("optimize", help="simulation-based grid search")
    runtime(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("forecast", help="holdout comparison of forecasting baselines")
    p.add_argument("series")
    p.add_argument("--holdout", type=_positive, default=12)
    p.add_argument("--models", help=f"comma list from {','.join(analysis.FORECAST_MODELS)}")
    runtime(p, config=False)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("sensitivity", help="tornado, adoption sweep, seed sweep, bootstrap")
    runtime(p)
    p.add_argument("--delta", type=float, help="override sensitivity.delta")
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (NoFeasiblePointError, InfeasibleScenarioError, ConvergenceError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SchemaError, ConfigError, LengthError, DomainError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
