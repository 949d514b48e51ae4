import numpy as np
import pytest

from tokencontrol import economy as ec
from tokencontrol import simulate as sim
from tokencontrol.errors import LineSearchFailed
from tokencontrol.forecast import generate, GrowthSpec
from tokencontrol.objective import ReferencePath, stage_costs
from tokencontrol.trajopt import OCProblem, SolveOptions, al_ilqr_solve

TIGHT = SolveOptions(cost_tolerance=1e-13, constraint_tolerance=1e-10, max_iterations=300)


def test_no_control_keeps_supply_fixed():
    for pattern in ("sigmoid", "logarithmic", "exponential"):
        res = sim.run_closed_loop(sim.standard_scenario(pattern, "supply-leads", seed=1, horizon_total=40))
        S = res.realized.states[:, ec.SUPPLY]
        assert np.all(S == S[0])


def test_closed_loop_is_deterministic():
    sc = sim.standard_scenario("logarithmic", "demand-leads", seed=4, controller="mpc-ilqr", horizon_total=25,
                               mpc_horizon=8)
    a, b = sim.run_closed_loop(sc), sim.run_closed_loop(sc)
    assert np.array_equal(a.realized.states, b.realized.states)
    assert np.array_equal(a.realized.controls, b.realized.controls)
    assert a.realized_total_cost == b.realized_total_cost


def test_realized_run_conserves_tokens_and_replays():
    sc = sim.standard_scenario("sigmoid", "balanced", seed=3, controller="pid", horizon_total=40)
    res = sim.run_closed_loop(sc)
    X, U = res.realized.states, res.realized.controls
    tot = X[:, ec.SUPPLY] + X[:, ec.RES_TOK]
    assert np.max(np.abs(np.diff(tot)) / tot[:-1]) < 1e-12
    real = generate(sc.growth, sc.horizon_total + 1)
    for t in range(len(U)):
        assert np.array_equal(ec.step_array(X[t], U[t], real.income[t], real.demand[t + 1]), X[t + 1])
    assert res.per_step_cost.sum() == pytest.approx(res.realized_total_cost, rel=1e-12)


def test_over_minting_price_falls_without_control():
    for pattern in ("sigmoid", "logarithmic", "exponential"):
        res = sim.run_closed_loop(sim.standard_scenario(pattern, "supply-leads", seed=0))
        assert res.prices[-1] < res.prices[0]


def test_noiseless_mpc_realizes_its_plan():
    sc = sim.standard_scenario("sigmoid", "balanced", seed=0, controller="mpc-ilqr", horizon_total=20,
                               mpc_horizon=6, noise_std=0.0)
    res = sim.run_closed_loop(sc)
    planned = np.array([r.planned_first_stage_cost for r in res.replans])
    assert not res.fallback_steps
    assert res.per_step_cost[:-1] == pytest.approx(planned, rel=1e-9, abs=1e-12)


def test_full_horizon_mpc_matches_open_loop():
    T = 12
    sc = sim.standard_scenario("sigmoid", "supply-leads", seed=0, controller="mpc-ilqr", horizon_total=T,
                               mpc_horizon=T, noise_std=0.0, reserve_usd=1e4, solve_options=TIGHT)
    res = sim.run_closed_loop(sc)
    fw = sim._Provider(sc).window(0, T)
    open_loop = al_ilqr_solve(OCProblem(sc.initial_state, T, fw, sc.refs.window(0, T), sc.weights, sc.bounds), TIGHT)
    assert res.realized_total_cost == pytest.approx(open_loop.cost, rel=1e-8)


def test_mpc_step_on_reference_returns_vanilla():
    H = 5
    S = 100.0
    demand = np.full(H + 1, 100.0)
    income = np.full(H + 1, 5.0)
    refs = ReferencePath.income_clearing(np.ones(H + 1), income)
    x = ec.EconomyState(S, 10.0, 50.0, 1.0)
    u, out = sim.mpc_step(x, np.column_stack([demand, income]), refs, sim.STANDARD_WEIGHTS,
                          ec.FeasibilityBounds())
    assert not out.fallback
    assert u.as_array() == pytest.approx(ec.vanilla_control(x, 5.0).as_array(), abs=1e-6)


def test_solver_failure_falls_back_to_vanilla(monkeypatch):
    def broken(*args, **kwargs):
        raise LineSearchFailed("injected")

    monkeypatch.setattr(sim, "al_ilqr_solve", broken)
    sc = sim.standard_scenario("sigmoid", "balanced", seed=0, controller="mpc-ilqr", horizon_total=6, mpc_horizon=3)
    res = sim.run_closed_loop(sc)
    assert res.fallback_steps == list(range(6))
    assert all(r.fallback and "injected" in r.error for r in res.replans)
    S = res.realized.states[:, ec.SUPPLY]
    assert np.all(S == S[0])


def test_mpc_improves_on_no_control_with_scp_and_bilevel():
    base = dict(horizon_total=12, mpc_horizon=4, noise_std=0.0, reserve_usd=2000.0)
    none = sim.run_closed_loop(sim.standard_scenario("sigmoid", "supply-leads", **base))
    for ctrl in ("mpc-scp", "mpc-bilevel"):
        res = sim.run_closed_loop(sim.standard_scenario("sigmoid", "supply-leads", controller=ctrl, **base))
        assert not res.aborted and res.realized_total_cost < none.realized_total_cost
    assert np.all(np.isfinite(res.realized.alphas[res.realized.alphas == res.realized.alphas]))


def test_series_scenario_uses_ar_forecasts():
    spec = GrowthSpec("sigmoid", cap=100, rate=0.15, midpoint=20, base=50, noise_std=0.01, seed=3)
    series = generate(spec, 41)
    refs = ReferencePath.income_clearing(1.005 ** np.arange(41), series.income)
    x0 = ec.EconomyState(float(series.demand[0]), 100.0, float(series.demand[0]), 1.0)
    sc = sim.Scenario(x0, 40, 10, refs, sim.STANDARD_WEIGHTS, controller="mpc-ilqr", series=series)
    res = sim.run_closed_loop(sc)
    none = sim.run_closed_loop(sc.with_controller("none"))
    assert res.realized_total_cost < none.realized_total_cost


def test_saturate_respects_reserves():
    b = ec.FeasibilityBounds(reserve_usd_min=2.0)
    x = np.array([100.0, 5.0, 3.0, 1.0])
    u = sim.saturate(x, [50.0, 80.0, 0.0], 1.0, b)
    assert u[ec.BUYBACK] <= 4.0 and u[ec.BUYBACK] == pytest.approx(4.0)
    assert u[ec.PAY] <= 3.0 + u[ec.BUYBACK] and u[ec.PAY] == pytest.approx(3.0 + u[ec.BUYBACK])
    xn = ec.step_array(x, u, 1.0, 100.0)
    assert xn[ec.RES_USD] >= 2.0 and xn[ec.RES_TOK] >= 0.0


def test_write_log(tmp_path):
    res = sim.run_closed_loop(sim.standard_scenario("sigmoid", "balanced", horizon_total=5))
    path = sim.write_log(res, tmp_path / "log.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,S,R_usd,R_tok,p,u_b,u_p,dp,alpha,stage_cost"
    assert len(lines) == 7


def test_scenario_validation():
    sc = sim.standard_scenario("sigmoid", "balanced", horizon_total=10)
    with pytest.raises(ValueError):
        sim.standard_scenario("sigmoid", "balanced", horizon_total=10, mpc_horizon=11, controller="bogus")
    with pytest.raises(ValueError):
        sim.Scenario(sc.initial_state, 10, 5, sc.refs)
