import io
import json

import numpy as np
import pytest

from nbsc.cli import main
from nbsc.config import RunConfig, config_from_dict, load_config
from nbsc.errors import ConfigError
from nbsc.ingest import read_table

SMALL = {
    "schema_version": 1,
    "simulation": {"replications": 2000, "base_seed": 7},
    "grids": {"alphas": [0.0, 0.25, 0.5, 0.75, 1.0],
              "quantities": {"S1": {"min": 0, "max": 16, "step": 4}, "S2": [0, 6]}},
    "sensitivity": {"seeds": [0, 42], "bootstrap_resamples": 200},
}


def write(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


@pytest.fixture
def config(tmp_path):
    return write(tmp_path / "config.json", SMALL)


@pytest.fixture
def series_file(tmp_path):
    y = np.random.default_rng(0).negative_binomial(4.5, 0.3, 60)
    lines = ["period,quantity"] + [f"{2010 + i // 12}-{1 + i % 12:02d},{v}" for i, v in enumerate(y)]
    p = tmp_path / "series.csv"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def all_csvs_round_trip(out):
    for f in out.glob("*.csv"):
        with open(f, encoding="utf-8", newline="") as fh:
            rows = read_table(fh)
        header = f.read_text(encoding="utf-8").splitlines()[0].split(",")
        assert all(list(r) == header for r in rows)


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.demand.r, cfg.demand.p0, cfg.demand.rho) == (4.5, 0.3, 0.6)
        e = cfg.economics
        assert (e.holding_cost, e.stockout_penalty, e.variance_weight, e.risk_weight,
                e.risk_exponent, e.fillrate_target) == (2, 15, 2, 5, 2, 0.9)
        assert (e.a1, e.a2, e.a3, e.a4) == (5, 3, 3, 4)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="bogus"):
            config_from_dict({"bogus": 1})
        with pytest.raises(ConfigError, match="kappa"):
            config_from_dict({"economics": {"kappa": 2}})

    def test_schema_version(self):
        with pytest.raises(ConfigError):
            config_from_dict({"schema_version": 99})

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            config_from_dict({"demand": {"r": -1, "p0": 0.3}})
        with pytest.raises(ConfigError):
            config_from_dict({"grids": {"quantities": {"S1": [1, 2]}}})

    def test_ranges(self):
        cfg = config_from_dict(SMALL)
        assert cfg.quantity_grids() == {"S1": (0, 4, 8, 12, 16), "S2": (0, 6)}

    def test_digest_stable(self, config):
        assert load_config(config).digest() == load_config(config).digest()
        other = dict(SMALL, simulation={"replications": 2000, "base_seed": 8})
        assert config_from_dict(other).digest() != load_config(config).digest()

    def test_unreadable(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")


class TestIngestCommand:
    def test_valid(self, tmp_path):
        src = tmp_path / "in.csv"
        src.write_text("Date,Product ID,Quantity Ordered\n2011-01-03,P,4\n2011-03-03,P,6\n"
                       "2011-03-09,P,\n", encoding="utf-8")
        out = tmp_path / "out"
        assert main(["ingest", str(src), "--out", str(out)]) == 0
        rows = read_table(io.StringIO((out / "monthly_series.csv").read_text()))
        assert [r["quantity"] for r in rows] == ["4", "0", "6"]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["records_rejected"] == 1
        all_csvs_round_trip(out)

    def test_missing_column(self, tmp_path, capsys):
        src = tmp_path / "in.csv"
        src.write_text("Date,Product ID\n2011-01-03,P\n", encoding="utf-8")
        assert main(["ingest", str(src), "--out", str(tmp_path / "o")]) == 2
        assert "Quantity Ordered" in capsys.readouterr().err

    def test_empty(self, tmp_path):
        src = tmp_path / "in.csv"
        src.write_text("Date,Product ID,Quantity Ordered\n", encoding="utf-8")
        out = tmp_path / "o"
        assert main(["ingest", str(src), "--out", str(out)]) == 0
        assert json.loads((out / "summary.json").read_text())["warnings"]

    def test_mapping(self, tmp_path):
        src = tmp_path / "in.csv"
        src.write_text("when,qty\n2011-01-03,4\n", encoding="utf-8")
        mapping = write(tmp_path / "map.json", {"date": "when", "quantity": "qty",
                                                "product_id": None})
        out = tmp_path / "o"
        assert main(["ingest", str(src), "--mapping", str(mapping), "--out", str(out)]) == 0

    def test_missing_file(self, tmp_path):
        assert main(["ingest", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


class TestFitCommand:
    def test_nb_series(self, series_file, tmp_path):
        out = tmp_path / "fit"
        assert main(["fit", str(series_file), "--out", str(out)]) == 0
        rep = json.loads((out / "fit_report.json").read_text())
        mf = rep["model_fit"]
        assert mf["lrt_p_value"] < 0.001 and mf["nb_aic"] < mf["poisson_aic"]
        assert rep["rho"] is not None and rep["mom"]["r"] > 0

    def test_poisson_series(self, tmp_path):
        y = np.random.default_rng(1).poisson(20, 48)
        p = tmp_path / "s.csv"
        p.write_text("period,quantity\n" + "".join(
            f"{2010 + i // 12}-{1 + i % 12:02d},{v}\n" for i, v in enumerate(y)))
        out = tmp_path / "fit"
        assert main(["fit", str(p), "--out", str(out)]) == 0
        rep = json.loads((out / "fit_report.json").read_text())
        assert "overdispersion_index_empirical" in rep["model_fit"]

    def test_equidispersed_series(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("period,quantity\n" + "".join(f"2011-{m:02d},5\n" for m in range(1, 13)))
        out = tmp_path / "fit"
        assert main(["fit", str(p), "--out", str(out)]) == 0
        rep = json.loads((out / "fit_report.json").read_text())
        assert rep["model_fit"]["degenerate"] and rep["diagnostics"]

    def test_malformed(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("foo,bar\n1,2\n")
        assert main(["fit", str(p), "--out", str(tmp_path / "o")]) == 2
        p.write_text("period,quantity\n2011-01,abc\n")
        assert main(["fit", str(p), "--out", str(tmp_path / "o")]) == 2


class TestOptimizeCommand:
    def test_outputs(self, config, tmp_path):
        out = tmp_path / "opt"
        assert main(["optimize", "--config", str(config), "--out", str(out)]) == 0
        rep = json.loads((out / "optimal_policy.json").read_text())
        grid = read_table(io.StringIO((out / "grid.csv").read_text()))
        assert len(grid) == rep["grid_size"] == 50
        assert sum(int(r["optimal"]) for r in grid) == 1
        best = max(float(r["objective"]) for r in grid)
        assert rep["result"]["objective_value"] == best
        all_csvs_round_trip(out)

    def test_thread_determinism(self, config, tmp_path):
        blobs = []
        for t in (1, 4, 16):
            out = tmp_path / f"t{t}"
            assert main(["optimize", "--config", str(config), "--out", str(out),
                         "--threads", str(t)]) == 0
            blobs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        assert blobs[0] == blobs[1] == blobs[2]

    def test_env_threads(self, config, tmp_path, monkeypatch):
        monkeypatch.setenv("NBSC_THREADS", "3")
        assert main(["optimize", "--config", str(config), "--out", str(tmp_path / "a")]) == 0
        monkeypatch.setenv("NBSC_THREADS", "x")
        assert main(["optimize", "--config", str(config), "--out", str(tmp_path / "b")]) == 2

    def test_seed_override(self, config, tmp_path):
        main(["optimize", "--config", str(config), "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["optimize", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "2"])
        a = json.loads((tmp_path / "a" / "optimal_policy.json").read_text())
        b = json.loads((tmp_path / "b" / "optimal_policy.json").read_text())
        assert a["base_seed"] == 1 and b["base_seed"] == 2
        assert a["result"]["expected_profit"] != b["result"]["expected_profit"]

    def test_infeasible(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.json", dict(SMALL, economics={"budget": 1.0},
                                              grids={"alphas": [0.0],
                                                     "quantities": {"S1": [5], "S2": [5]}}))
        assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "NoFeasiblePointError" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"simulation": {"replications": 0}})
        assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestForecastCommand:
    def test_outputs(self, series_file, tmp_path):
        out = tmp_path / "fc"
        assert main(["forecast", str(series_file), "--holdout", "12", "--out", str(out)]) == 0
        with open(out / "scores.csv", encoding="utf-8") as fh:
            rows = read_table(fh)
        assert list(rows[0]) == ["model", "MAE", "RMSE", "MAPE"]
        assert len(rows) == 4
        all_csvs_round_trip(out)

    def test_deterministic_series(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("period,quantity\n" + "".join(f"2011-{m:02d},9\n" for m in range(1, 13)))
        out = tmp_path / "fc"
        assert main(["forecast", str(p), "--holdout", "4", "--out", str(out)]) == 0
        rows = read_table(io.StringIO((out / "scores.csv").read_text()))
        assert all(abs(float(r["MAE"])) < 1e-6 for r in rows)

    def test_holdout_too_long(self, series_file, tmp_path):
        assert main(["forecast", str(series_file), "--holdout", "60", "--out", str(tmp_path)]) == 2


class TestSensitivityCommand:
    def test_outputs(self, config, tmp_path):
        out = tmp_path / "sens"
        assert main(["sensitivity", "--config", str(config), "--out", str(out)]) == 0
        names = {f.name for f in out.iterdir()}
        assert names == {"tornado.csv", "adoption_curve.csv", "seed_sweep.csv",
                         "bootstrap_ci.json"}
        ci = json.loads((out / "bootstrap_ci.json").read_text())
        assert ci["expected_profit"]["lower"] <= ci["expected_profit"]["upper"]
        all_csvs_round_trip(out)

    def test_zero_delta_single_seed(self, tmp_path):
        cfg = write(tmp_path / "c.json", dict(SMALL, sensitivity={"seeds": [5], "delta": 0.0}))
        out = tmp_path / "sens"
        assert main(["sensitivity", "--config", str(cfg), "--out", str(out)]) == 0
        tornado = read_table(io.StringIO((out / "tornado.csv").read_text()))
        assert all(float(r["impact"]) == 0.0 for r in tornado)
        assert json.loads((out / "bootstrap_ci.json").read_text())["seed_spread"] == 0.0

    def test_constant_profit_ci(self, tmp_path):
        # No demand variability reaches profit when nothing is stocked and nothing is priced.
        cfg = write(tmp_path / "c.json", dict(
            SMALL, economics={"unit_price": 0, "salvage_value": 0, "holding_cost": 0,
                              "stockout_penalty": 0},
            sensitivity={"seeds": [1], "scenario_quantities": {"S1": 0, "S2": 0}}))
        out = tmp_path / "sens"
        assert main(["sensitivity", "--config", str(cfg), "--out", str(out)]) == 0
        ci = json.loads((out / "bootstrap_ci.json").read_text())["expected_profit"]
        assert ci["lower"] == ci["upper"] == ci["mean"]


def test_default_config_runs(tmp_path):
    out = tmp_path / "o"
    assert main(["optimize", "--replications", "500", "--out", str(out)]) == 0
