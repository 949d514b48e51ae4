import numpy as np
import pytest
from conftest import token_instance

from tokencontrol import economy as ec
from tokencontrol import game
from tokencontrol.errors import DomainError
from tokencontrol.game import GameParams, best_response, kkt_residual, node_utility
from tokencontrol.objective import CostWeights

ALPHA_GRID = np.linspace(0, 1, 101)


def test_node_utility_examples():
    P = GameParams(0.9)
    assert node_utility(1, 0.3, 100, 2, 5, P) == pytest.approx(100 * 2.3)
    assert node_utility(0, 0.3, 100, 2, 5, P) == pytest.approx(0.9 * 100 * 5)
    assert node_utility(0.5, 0, 100, 2, 2, P) == pytest.approx(190)
    with pytest.raises(DomainError):
        node_utility(1.5, 0, 1, 1, 1, P)


def test_expected_next_price():
    P = GameParams(0.9)
    assert game.expected_next_price(100, 200, 0, P) == 2.0
    mc = GameParams(0.9, expectation_mode="monte-carlo", mc_samples=1000)
    assert game.expected_next_price(100, 200, 0, mc) == game.expected_next_price(100, 200, 0, P)
    big = GameParams(0.9, expectation_mode="monte-carlo", mc_samples=100_000, seed=3)
    v = game.expected_next_price(100, 200, 10, big)
    assert abs(v - 2.0) < 3 * (10 / 100) / np.sqrt(100_000)


def test_best_response_examples():
    P = GameParams(0.9)
    r = best_response(0.5, 2, 2, P)
    assert (r.kind, r.alpha) == ("sell-all", 1.0)
    r = best_response(-0.5, 2, 2, P)
    assert (r.kind, r.alpha) == ("hold-all", 0.0)
    r = best_response(0.9 * 2 - 2, 2, 2, P, tie_break=0.37)
    assert r.kind == "indifferent" and r.alpha == 0.37
    assert node_utility(0.0, -0.2, 1, 2, 2, P) == pytest.approx(node_utility(1.0, -0.2, 1, 2, 2, P))


def test_best_response_beats_alpha_grid_on_random_instances():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        P = GameParams(rng.uniform(0.05, 1.0))
        S, p, E = rng.uniform(1, 1e3), rng.uniform(0.1, 10), rng.uniform(0.1, 10)
        dp = rng.uniform(-0.9 * p, 2 * p)
        if rng.random() < 0.1:
            dp = P.risk_factor * E - p          # exercise the indifference branch
        r = best_response(dp, p, E, P, tie_break=rng.random(), supply=S)
        grid = max(node_utility(a, dp, S, p, E, P) for a in ALPHA_GRID)
        scale = max(1.0, abs(grid))
        worst = max(worst, (grid - r.utility) / scale)
        res = kkt_residual(r.alpha, dp, r.duals, S, p, E, P)
        assert max(res.values()) < 1e-8 * max(1.0, S * p)
    assert worst < 1e-9


def test_kkt_residual_examples():
    P = GameParams(0.9)
    res = kkt_residual(0.5, 0.0, (0.0, 0.0), 100, 2, 2, P)
    assert res["stationarity"] == pytest.approx(abs(100 * 2 - 0.9 * 100 * 2))
    res = kkt_residual(0.3, 0.0, (-4.0, 0.0), 100, 2, 2, P)
    assert res["complementarity"] == pytest.approx(0.3 * 4.0)


def test_indifference_with_unit_risk_factor():
    P = GameParams(1.0)
    assert best_response(0.0, 2.0, 2.0, P).kind == "indifferent"
    assert best_response(0.0, 2.0, 2.1, P).kind == "hold-all"


@pytest.fixture(scope="module")
def solved():
    out = []
    for ratio in (0.8, 1.3):
        prob = token_instance(H=6, supply_ratio=ratio, reserve_usd=5000.0)
        out.append((prob, game.bilevel_solve(prob, GameParams(0.9))))
    return out


def test_bilevel_beats_naive_strategies(solved):
    for prob, res in solved:
        for alpha in (0, 1):
            assert res.controller_cost <= game.forced_alpha_cost(prob, GameParams(0.9), alpha) + 1e-9


def test_bilevel_certificates(solved):
    P = GameParams(0.9)
    for prob, res in solved:
        assert res.max_kkt_residual < 1e-6
        X, U = res.states, res.controls
        S, p = X[:-1, ec.SUPPLY], X[:-1, ec.PRICE]
        # buy-backs are exactly what holders sell
        assert U[:, ec.BUYBACK] == pytest.approx(res.alphas * S * (p + U[:, ec.INCENTIVE]), rel=1e-8)
        # given the posted incentive, no alpha on the grid improves holders' utility
        for t in range(prob.horizon):
            best = max(node_utility(a, U[t, ec.INCENTIVE], S[t], p[t], res.expected_prices[t], P)
                       for a in ALPHA_GRID)
            assert best - res.node_utilities[t] <= 1e-9 * max(1.0, abs(best))
        # the returned states replay through the plain dynamics
        replay = ec.Trajectory(X, U, prob.forecasts)
        assert replay.horizon == prob.horizon


def test_one_step_bilevel_matches_grid_search():
    P = GameParams(0.9)
    for ratio in (0.8, 1.3):
        prob = token_instance(H=1, supply_ratio=ratio, reserve_usd=5000.0)
        res = game.bilevel_solve(prob, P)
        coarse = game.rollout_incentive_search(prob, P, np.linspace(-0.5, 0.5, 201), pay_grid=np.linspace(0, 20, 201))
        assert res.controller_cost <= coarse.controller_cost + 1e-9
        dp0, pay0 = res.incentives[0], res.controls[0, ec.PAY]
        fine = game.rollout_incentive_search(prob, P, dp0 + np.linspace(-1e-3, 1e-3, 41),
                                             pay_grid=pay0 + np.linspace(-1e-2, 1e-2, 41))
        assert res.controller_cost <= fine.controller_cost + 1e-9
        assert fine.controller_cost - res.controller_cost < 1e-3 * max(1.0, res.controller_cost)


def test_holding_worthless_means_selling_at_market():
    prob = token_instance(H=5, supply_ratio=1.2, reserve_usd=1e6, weights=CostWeights(1000, 0, 1))
    res = game.bilevel_solve(prob, GameParams(1e-9))
    assert all(k == "sell-all" for k in res.kinds)
    assert np.allclose(res.alphas, 1.0, atol=1e-9)
    assert np.allclose(res.incentives, 0.0, atol=1e-9)


def test_grid_search_properties():
    prob = token_instance(H=2, supply_ratio=1.1, reserve_usd=5000.0)
    P = GameParams(0.9)
    zero = game.rollout_incentive_search(prob, P, [0.0])
    assert np.all(zero.incentives == 0)
    for t, k in enumerate(zero.kinds):
        S, p = zero.states[t, ec.SUPPLY], zero.states[t, ec.PRICE]
        assert k == best_response(0.0, p, zero.expected_prices[t], P, zero.alphas[t], S).kind
    coarse = game.rollout_incentive_search(prob, P, np.linspace(-0.3, 0.3, 7))
    fine = game.rollout_incentive_search(prob, P, np.linspace(-0.3, 0.3, 13))
    assert fine.controller_cost <= coarse.controller_cost


def test_game_csv(tmp_path, solved):
    _, res = solved[0]
    path = game.write_game_csv(res, tmp_path / "g.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,dp_star,alpha_star,utility,branch"
    assert len(lines) == len(res.alphas) + 1
