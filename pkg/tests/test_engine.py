from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbsc import engine
from nbsc.demand import DemandParams, nb_cdf
from nbsc.economics import EconomicParams, Scenario, Supplier, replication_profit
from nbsc.engine import (
    DemandSample,
    GridPoint,
    ScenarioResult,
    SimulationConfig,
    adoption_sweep,
    build_grid,
    evaluate_scenario,
    grid_search,
    select_optimum,
    simulate_demand,
)
from nbsc.errors import ConfigError, InfeasibleScenarioError, NoFeasiblePointError
from nbsc.rng import counter_uniforms, replication_seed, replication_seeds, splitmix64

DP = DemandParams(4.5, 0.3)
ECON = EconomicParams()
SUPS = (Supplier("S1", 15.0, 0.8), Supplier("S2", 16.0, 0.4))


def small_cfg(**kw):
    kw.setdefault("replications", 2000)
    return SimulationConfig(**kw)


class TestSeeding:
    def test_deterministic(self):
        assert replication_seed(7, 3, 11) == replication_seed(7, 3, 11)

    def test_neighbours_differ(self):
        base = 2023
        s00 = replication_seed(base, 0, 0)
        assert s00 != replication_seed(base, 0, 1)
        assert s00 != replication_seed(base, 1, 0)
        assert replication_seed(0, 0, 0) != replication_seed(1, 0, 0)

    def test_collision_scan(self):
        seeds = np.concatenate([replication_seeds(12345, s, np.arange(1000)) for s in range(1000)])
        assert seeds.size == 1_000_000
        assert np.unique(seeds).size == seeds.size

    def test_vector_matches_scalar(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            base = int(rng.integers(0, 2**63))
            s, m = (int(v) for v in rng.integers(0, 2**32, size=2))
            assert int(replication_seeds(base, s, np.array([m]))[0]) == replication_seed(base, s, m)

    def test_splitmix_reference(self):
        # First outputs of the reference SplitMix64 generator seeded with 0.
        state = 0
        out = []
        for _ in range(3):
            state = (state + 0x9E3779B97F4A7C15) % 2**64
            out.append(splitmix64(state))
        assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]

    def test_order_independence(self):
        seeds = replication_seeds(99, 0, np.arange(500))
        perm = np.random.default_rng(1).permutation(500)
        u = counter_uniforms(seeds, 6)
        assert np.array_equal(counter_uniforms(seeds[perm], 6), u[perm])
        assert np.all((u > 0) & (u < 1))

    def test_index_range(self):
        with pytest.raises(ValueError):
            replication_seed(0, -1, 0)
        with pytest.raises(ValueError):
            replication_seed(0, 0, 2**32)


class TestSimulationConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            SimulationConfig(replications=0)
        with pytest.raises(ConfigError):
            SimulationConfig(alpha_step=0.3)
        with pytest.raises(ConfigError):
            SimulationConfig(sampler="lhs")
        with pytest.raises(ConfigError):
            SimulationConfig(horizon=0)

    def test_alpha_grid(self):
        grid = SimulationConfig().alpha_grid()
        assert len(grid) == 21 and grid[0] == 0.0 and grid[-1] == 1.0 and grid[11] == 0.55


class TestSimulation:
    @pytest.mark.parametrize("sampler", ["rqmc", "mc"])
    def test_thread_invariance(self, sampler):
        cfg = small_cfg(replications=9000, sampler=sampler, horizon=3)
        a = simulate_demand(DP, cfg, threads=1)
        b = simulate_demand(DP, cfg, threads=7)
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.probabilities, b.probabilities)

    def test_mc_prefix_stable(self):
        # Counter-based streams: replication m is the same whatever M is.
        a = simulate_demand(DP, small_cfg(sampler="mc", replications=100))
        b = simulate_demand(DP, small_cfg(sampler="mc", replications=300))
        assert np.array_equal(a.draws, b.draws[:100])

    def test_seed_changes_draws(self):
        a = simulate_demand(DP, small_cfg(base_seed=1))
        b = simulate_demand(DP, small_cfg(base_seed=2))
        assert not np.array_equal(a.draws, b.draws)

    @pytest.mark.parametrize("sampler", ["rqmc", "mc"])
    def test_marginal_moments(self, sampler):
        d = simulate_demand(DP, small_cfg(replications=50_000, sampler=sampler)).totals
        assert abs(d.mean() - 10.5) < 0.2
        assert abs(d.var(ddof=1) - 35.0) < 2.0


class TestEvaluate:
    def test_degenerate_demand(self):
        dp = DemandParams(4.5, 0.999999, sigma_eps=0.0, p_ceil=0.9999999)
        res = evaluate_scenario(Scenario(0.0, {"S1": 10, "S2": 0}), dp, SUPS, ECON, small_cfg())
        assert res.fill_rate == 1.0 and res.stockout_prob == 0.0

    @pytest.mark.parametrize("sampler", ["rqmc", "mc"])
    def test_fill_rate_against_cdf(self, sampler):
        target = nb_cdf(4.5, 0.3, 11)
        s = Scenario(0.0, {"S1": 11, "S2": 0})
        for seed in range(20):
            cfg = SimulationConfig(replications=10_000, base_seed=seed, sampler=sampler)
            assert abs(evaluate_scenario(s, DP, SUPS, ECON, cfg).fill_rate - target) <= 0.015

    def test_bitwise_determinism(self):
        s = Scenario(0.35, {"S1": 6, "S2": 4})
        a = evaluate_scenario(s, DP, SUPS, ECON, small_cfg(base_seed=5))
        b = evaluate_scenario(s, DP, SUPS, ECON, small_cfg(base_seed=5), threads=4)
        assert a == b

    def test_invariants(self):
        res = evaluate_scenario(Scenario(0.5, {"S1": 8, "S2": 4}), DP, SUPS, ECON, small_cfg())
        assert res.fill_rate + res.stockout_prob == 1.0
        assert res.profit_variance == pytest.approx(res.profit_std ** 2, rel=1e-12)
        assert res.demand_variance_analytic == 35.0
        penalties = sum(res.penalties.values())
        assert res.objective_value == pytest.approx(res.expected_profit - penalties, rel=1e-12)
        assert res.penalties["variance"] == ECON.variance_weight * res.demand_variance
        comps = res.component_means
        assert res.expected_profit == pytest.approx(
            comps["revenue"] + comps["salvage"] - comps["stockout"] - comps["holding"]
            - comps["procurement"] - comps["adoption"], rel=1e-12)

    def test_matches_replication_profit(self):
        cfg = small_cfg(replications=500)
        s = Scenario(0.4, {"S1": 7, "S2": 5})
        demand = simulate_demand(DP, cfg)
        res = evaluate_scenario(s, DP, SUPS, ECON, cfg, demand=demand)
        oracle = [replication_profit(s, int(d), SUPS, ECON)[0] for d in demand.totals]
        assert res.expected_profit == pytest.approx(np.mean(oracle), rel=1e-12)
        assert res.profit_variance == pytest.approx(np.var(oracle, ddof=1), rel=1e-9)

    def test_infeasible(self):
        econ = replace(ECON, budget=10)
        with pytest.raises(InfeasibleScenarioError):
            evaluate_scenario(Scenario(0.0, {"S1": 5, "S2": 0}), DP, SUPS, econ, small_cfg())

    def test_multi_period(self):
        cfg = small_cfg(horizon=4)
        res = evaluate_scenario(Scenario(0.0, {"S1": 40, "S2": 0}), DP, SUPS, ECON, cfg)
        assert 0 < res.fill_rate < 1
        assert np.isnan(res.demand_variance_analytic)


def oracle_enumeration(alphas, grids, draws, econ, sups=SUPS):
    """Independent brute force: replication_profit over every demand value."""
    rows = []
    m = draws.size
    for s in build_grid(alphas, grids):
        try:
            profits = [replication_profit(s, int(d), sups, econ)[0] for d in draws]
        except InfeasibleScenarioError:
            continue
        q = s.total_quantity
        fill = np.count_nonzero(draws <= q) / m
        var = np.var(draws, ddof=1) if m > 1 else 0.0
        obj = (np.mean(profits) - econ.variance_weight * var
               - econ.risk_weight * (1 - fill) ** econ.risk_exponent
               - econ.fillrate_weight * (econ.fillrate_target - fill) ** 2)
        rows.append((s, obj, fill))
    best = max(r[1] for r in rows)
    tied = [r for r in rows if r[1] >= best - 1e-9]
    tied.sort(key=lambda r: (-r[2], r[0].alpha, r[0].total_quantity,
                             tuple(r[0].quantities[k] for k in sorted(r[0].quantities))))
    return tied[0], rows


class TestGridSearch:
    alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
    grids = {"S1": (0, 4, 8, 12, 16), "S2": (0,)}

    def test_single_point(self):
        pol = grid_search([0.3], {"S1": (5,), "S2": (2,)}, DP, SUPS, ECON, small_cfg())
        assert pol.scenario == Scenario(0.3, {"S1": 5, "S2": 2}) and pol.grid_size == 1

    def test_fixed_demand_oracle(self):
        # Deterministic demand D=9 in every replication.
        demand = DemandSample.fixed(np.full(50, 9))
        pol = grid_search(self.alphas, self.grids, DP, SUPS, ECON, small_cfg(), demand=demand)
        (best, obj, fill), _ = oracle_enumeration(self.alphas, self.grids, np.full(50, 9), ECON)
        assert pol.scenario == best
        assert pol.result.objective_value == pytest.approx(obj, abs=1e-9)
        assert pol.result.fill_rate == fill

    def test_noiseless_path_oracle(self):
        dp = replace(DP, sigma_eps=0.0)
        cfg = small_cfg(replications=300)
        pol = grid_search(self.alphas, self.grids, dp, SUPS, ECON, cfg)
        draws = simulate_demand(dp, cfg).totals
        (best, obj, fill), rows = oracle_enumeration(self.alphas, self.grids, draws, ECON)
        assert pol.scenario == best
        assert pol.result.objective_value == pytest.approx(obj, rel=1e-12)
        by_scenario = {(p.scenario.alpha, p.scenario.total_quantity): p.result.objective_value
                       for p in pol.points}
        for s, o, _ in rows:
            assert by_scenario[(s.alpha, s.total_quantity)] == pytest.approx(o, rel=1e-12)

    def test_tie_rule(self):
        def point(i, alpha, q, obj, fill):
            res = ScenarioResult(obj, 0.0, 0.0, fill, 1 - fill, 0.0, 0.0, obj, {}, {}, 1)
            return GridPoint(i, Scenario(alpha, {"S1": q}), res)

        pts = [point(0, 0.0, 5, 10.0, 0.8), point(1, 0.5, 9, 10.0 + 5e-10, 0.95),
               point(2, 0.1, 3, 9.0, 1.0)]
        best, ties = select_optimum(pts)
        assert best.index == 1 and ties == 1
        pts = [point(0, 0.5, 5, 10.0, 0.9), point(1, 0.2, 9, 10.0, 0.9), point(2, 0.2, 7, 10.0, 0.9)]
        assert select_optimum(pts)[0].index == 2

    def test_tie_on_fixed_demand(self):
        # Zero prices make every point equal; the highest fill rate must win.
        econ = EconomicParams(unit_price=0, salvage_value=0, holding_cost=0, stockout_penalty=0,
                              variance_weight=0, risk_weight=0, fillrate_weight=0,
                              adoption_scale=0, a1=0, a2=0, a3=0, a4=0)
        sups = (Supplier("S1", 1e-12),)
        demand = DemandSample.fixed([3, 6, 9, 12])
        pol = grid_search([0.0, 0.5], {"S1": (0, 5, 10, 15)}, DP, sups, econ, small_cfg(),
                          demand=demand)
        assert pol.scenario == Scenario(0.0, {"S1": 15})
        assert pol.ties_broken == 7

    def test_no_feasible(self):
        with pytest.raises(NoFeasiblePointError):
            grid_search([0.0], {"S1": (10,), "S2": (10,)}, DP, SUPS, replace(ECON, budget=1),
                        small_cfg())

    def test_infeasible_points_skipped(self):
        econ = replace(ECON, budget=100)
        pol = grid_search([0.0], {"S1": (0, 5, 10), "S2": (0,)}, DP, SUPS, econ, small_cfg())
        assert pol.infeasible == 1 and pol.grid_size == 2

    def test_optimum_dominates(self):
        pol = grid_search(self.alphas, self.grids, DP, SUPS, ECON, small_cfg())
        assert all(pol.result.objective_value >= p.result.objective_value for p in pol.points)

    def test_thread_invariance(self):
        cfg = small_cfg(replications=3000)
        a = grid_search(self.alphas, self.grids, DP, SUPS, ECON, cfg, threads=1)
        b = grid_search(self.alphas, self.grids, DP, SUPS, ECON, cfg, threads=8)
        assert a.scenario == b.scenario and a.result == b.result
        assert [p.result for p in a.points] == [p.result for p in b.points]

    def test_independent_streams(self):
        cfg = small_cfg(common_random_numbers=False)
        pol = grid_search([0.0, 1.0], {"S1": (8,), "S2": (0,)}, DP, SUPS, ECON, cfg, threads=3)
        d0, d1 = (p.result.demand_variance for p in pol.points)
        assert d0 != d1
        again = grid_search([0.0, 1.0], {"S1": (8,), "S2": (0,)}, DP, SUPS, ECON, cfg)
        assert [p.result for p in pol.points] == [p.result for p in again.points]

    def test_profit_criterion(self):
        cfg = small_cfg(criterion="expected_profit")
        pol = grid_search(self.alphas, self.grids, DP, SUPS, ECON, cfg)
        assert pol.result.expected_profit == max(p.result.expected_profit for p in pol.points)

    @given(st.floats(0, 60), st.floats(0, 60))
    @settings(max_examples=15, deadline=None)
    def test_stockout_penalty_monotone(self, rp1, rp2):
        lo, hi = sorted((rp1, rp2))
        demand = simulate_demand(DP, small_cfg(replications=1000))
        grids = {"S1": tuple(range(0, 31, 3)), "S2": (0,)}
        probs = [grid_search([0.5], grids, DP, SUPS, replace(ECON, stockout_penalty=rp),
                             small_cfg(), demand=demand).result.stockout_prob for rp in (lo, hi)]
        assert probs[1] <= probs[0]


class TestAdoptionSweep:
    def test_single(self):
        rows = adoption_sweep([0.5], {"S1": 8, "S2": 6}, DP, SUPS, ECON, small_cfg())
        assert len(rows) == 1 and rows[0][0] == 0.5

    def test_order_independent(self):
        alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
        fwd = adoption_sweep(alphas, {"S1": 8, "S2": 6}, DP, SUPS, ECON, small_cfg())
        rev = adoption_sweep(alphas[::-1], {"S1": 8, "S2": 6}, DP, SUPS, ECON, small_cfg())
        assert dict(fwd) == dict(rev)

    def test_linear_increments(self):
        econ = replace(ECON, adoption_exponent=1.0, adoption_scale=0.0)
        rows = adoption_sweep([0.0, 0.25, 0.5, 0.75, 1.0], {"S1": 8, "S2": 6}, DP, SUPS, econ,
                              small_cfg())
        steps = np.diff([p for _, p in rows])
        assert np.allclose(steps, steps[0], rtol=1e-9)


def test_fill_rate_curve_monotone():
    curve = engine.fill_rate_curve(range(0, 40, 4), DP, small_cfg())
    fills = [f for _, f in curve]
    assert all(b >= a for a, b in zip(fills, fills[1:]))
