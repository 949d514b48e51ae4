import numpy as np
import pytest
from conftest import random_lq, stacked_lq_oracle, token_instance

from tokencontrol import economy as ec
from tokencontrol.errors import QPInfeasible, QPUnbounded
from tokencontrol.objective import CostWeights, ReferencePath
from tokencontrol.trajopt import (LQProblem, OCProblem, SolveOptions, al_ilqr_solve, ilqr_solve, lqr_gains,
                                  lqr_rollout, qp_solve, rollout, scp_solve, token_problem)


def lq_solution(p):
    K, k = lqr_gains(p.A, p.B, p.Q, p.R, p.q, p.r, p.c)
    X, U = lqr_rollout(p.A, p.B, K, k, p.x0, p.c)
    return K, k, X, U


# -- LQR ---------------------------------------------------------------------

def test_scalar_riccati_gain():
    A = np.ones((1, 1, 1))
    B = np.ones((1, 1, 1))
    K, k = lqr_gains(A, B, np.ones((2, 1, 1)), np.ones((1, 1, 1)))
    assert K[0, 0, 0] == pytest.approx(-0.5)
    assert k[0, 0] == pytest.approx(0)


def test_zero_state_cost_gives_zero_gains(rng):
    p = random_lq(rng, H=6)
    K, k = lqr_gains(p.A, p.B, np.zeros_like(p.Q), p.R)
    assert np.all(K == 0) and np.all(k == 0)


@pytest.mark.parametrize("seed", range(5))
def test_lqr_matches_stacked_least_squares(seed):
    p = random_lq(np.random.default_rng(seed), H=12)
    _, _, _, U = lq_solution(p)
    assert np.max(np.abs(U - stacked_lq_oracle(p))) < 1e-8


def test_lqr_accepts_linearized_steps():
    prob = token_instance(H=5)
    cp = token_problem(prob)
    U0 = cp.initial_guess()
    X0 = cp.rollout(U0)
    A, B = cp.jacobians(X0, U0)
    K, k = lqr_gains(A, B, np.eye(4)[None].repeat(6, 0), np.eye(2)[None].repeat(5, 0))
    assert K.shape == (5, 2, 4) and k.shape == (5, 2)


# -- iLQR ---------------------------------------------------------------------

def test_ilqr_on_lq_matches_riccati(rng):
    p = random_lq(rng)
    _, _, X, U = lq_solution(p)
    res = ilqr_solve(p)
    assert res.converged
    # one Newton step, plus one confirming step because of the regulariser
    assert res.iterations <= 2
    assert np.max(np.abs(res.decisions - U)) < 1e-6
    assert res.cost == pytest.approx(p.total_cost(X, U), rel=1e-8)


def test_ilqr_at_optimum_is_fixed_point(rng):
    p = random_lq(rng, H=8)
    _, _, X, U = lq_solution(p)
    res = ilqr_solve(p, U)
    assert res.iterations == 0
    assert res.cost == pytest.approx(p.total_cost(X, U), rel=1e-14)


def test_ilqr_token_descent_and_monotone():
    prob = token_instance(H=15, supply_ratio=1.3)
    cp = token_problem(prob)
    U0 = cp.initial_guess()
    J0 = cp.total_cost(cp.rollout(U0), U0)
    res = ilqr_solve(prob)
    assert res.cost < J0
    hist = res.cost_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_solvers_are_deterministic():
    prob = token_instance(H=10, supply_ratio=1.3)
    for solve in (ilqr_solve, al_ilqr_solve, scp_solve):
        a, b = solve(prob), solve(prob)
        assert np.array_equal(a.decisions, b.decisions) and a.cost == b.cost


def test_rollout_examples():
    prob = token_instance(H=6)
    tr = rollout(prob, np.zeros((6, 3)))
    assert np.all(tr.states[:, ec.SUPPLY] == tr.states[0, ec.SUPPLY])
    cp = token_problem(prob)
    V = cp.full_controls(cp.initial_guess())
    tr = rollout(prob, V)
    S0 = prob.initial_state.supply
    assert tr.states[:, ec.SUPPLY] == pytest.approx(np.full(7, S0), rel=1e-12)
    assert tr.states[1:, ec.PRICE] == pytest.approx(prob.forecasts[1:, ec.DEMAND] / S0, rel=1e-12)
    res = al_ilqr_solve(prob)
    assert np.array_equal(rollout(prob, res.trajectory.controls).states, res.states)


def test_trace_dump(tmp_path):
    path = tmp_path / "trace.csv"
    ilqr_solve(token_instance(H=5, supply_ratio=1.2), opts=SolveOptions(trace_path=str(path)))
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,cost,violation,regularization" and len(lines) > 1


# -- AL-iLQR ------------------------------------------------------------------

def test_al_interior_matches_ilqr():
    prob = token_instance(H=10, supply_ratio=1.1, reserve_usd=1e4)
    a = ilqr_solve(prob)
    b = al_ilqr_solve(prob)
    assert a.max_constraint_violation == 0
    assert np.max(np.abs(a.decisions - b.decisions)) < 1e-9
    for key in ("x_lower", "u_lower"):
        assert np.all(b.multipliers[key] == 0)


def binding_reserve_instance():
    # over-minted economy with little cash: buying back all the excess is unaffordable
    return token_instance(H=12, supply_ratio=1.6, reserve_usd=2.0, reserve_min=1.0)


def test_al_enforces_reserve_floor():
    prob = binding_reserve_instance()
    free = ilqr_solve(prob)
    lo = prob.bounds.state_lower()
    assert np.min(free.states[1:, ec.RES_USD]) < lo[ec.RES_USD] - 1e-2
    res = al_ilqr_solve(prob)
    assert res.converged
    assert np.min(res.states[1:, ec.RES_USD]) >= lo[ec.RES_USD] - 1e-4
    assert np.min(res.decisions) >= -1e-4
    # multipliers of never-binding bounds remain zero
    assert np.all(res.multipliers["x_lower"][:, ec.SUPPLY] == 0)


# -- QP -----------------------------------------------------------------------

def test_qp_hand_kkt():
    res = qp_solve(np.array([[2.0]]), np.array([-2.0]), G=np.array([[1.0]]), h=np.array([0.0]))
    assert res.x[0] == pytest.approx(0, abs=1e-12)
    assert res.ineq_duals[0] == pytest.approx(2)


def test_qp_unconstrained_normal_equations(rng):
    M = rng.standard_normal((6, 6))
    P = M @ M.T + np.eye(6)
    q = rng.standard_normal(6)
    assert qp_solve(P, q).x == pytest.approx(np.linalg.solve(P, -q))


def projected_gradient(P, q, lo, hi, iters=200000):
    x = np.clip(np.zeros(len(q)), lo, hi)
    step = 1.0 / np.linalg.eigvalsh(P).max()
    for _ in range(iters):
        xn = np.clip(x - step * (P @ x + q), lo, hi)
        if np.max(np.abs(xn - x)) < 1e-15:
            break
        x = xn
    return x


@pytest.mark.parametrize("seed", range(3))
def test_qp_box_matches_projected_gradient(seed):
    rng = np.random.default_rng(seed)
    n = 20
    M = rng.standard_normal((n, n))
    P = M @ M.T / n + 0.1 * np.eye(n)
    q = 3 * rng.standard_normal(n)
    lo, hi = -np.ones(n), np.ones(n)
    G = np.vstack([np.eye(n), -np.eye(n)])
    h = np.concatenate([hi, -lo])
    res = qp_solve(P, q, G=G, h=h)
    x_pg = projected_gradient(P, q, lo, hi)

    def f(x):
        return 0.5 * x @ P @ x + q @ x

    assert abs(f(res.x) - f(x_pg)) < 1e-6
    kkt = res.kkt_residuals(P, q, G=G, h=h)
    assert max(kkt.values()) < 1e-8


def test_qp_equalities_and_inequalities(rng):
    n = 8
    M = rng.standard_normal((n, n))
    P = M @ M.T + np.eye(n)
    q = rng.standard_normal(n)
    A = rng.standard_normal((2, n))
    b = rng.standard_normal(2)
    G = rng.standard_normal((5, n))
    h = rng.uniform(0, 0.1, 5)
    res = qp_solve(P, q, A, b, G, h)
    assert max(res.kkt_residuals(P, q, A, b, G, h).values()) < 1e-8


def test_qp_infeasible_and_unbounded():
    with pytest.raises(QPInfeasible):
        qp_solve(np.eye(1), np.zeros(1), G=np.array([[1.0], [-1.0]]), h=np.array([-1.0, -1.0]))
    with pytest.raises(QPUnbounded):
        qp_solve(np.zeros((1, 1)), np.array([1.0]))


# -- SCP ----------------------------------------------------------------------

def test_scp_on_lq_matches_riccati(rng):
    p = random_lq(rng)
    _, _, X, U = lq_solution(p)
    res = scp_solve(p)
    assert res.converged
    assert np.max(np.abs(res.decisions - U)) < 1e-6
    assert res.cost == pytest.approx(p.total_cost(X, U), rel=1e-8)


def test_scp_respects_nonnegative_buyback():
    # price far above reference: the cost wants negative buy-backs (minting for cash)
    prob = token_instance(H=8, supply_ratio=0.6, reserve_usd=50.0)
    res = scp_solve(prob)
    assert np.min(res.decisions[:, 0]) >= -1e-10


def test_scp_and_al_agree_on_token_instances():
    for prob in (token_instance(H=15, supply_ratio=1.3), binding_reserve_instance(),
                 token_instance(H=10, supply_ratio=0.8)):
        a = al_ilqr_solve(prob)
        s = scp_solve(prob)
        assert a.converged and s.converged
        assert s.cost == pytest.approx(a.cost, rel=1e-2)
        assert s.max_constraint_violation <= 1e-4


def test_scp_reports_infeasible_subproblem():
    prob = binding_reserve_instance()
    # a floor above the initial cash that income cannot restore in one step
    bad = OCProblem(prob.initial_state, prob.horizon, prob.forecasts, prob.refs, prob.weights,
                    ec.FeasibilityBounds(reserve_usd_min=1e6))
    with pytest.raises(QPInfeasible) as ei:
        scp_solve(bad)
    assert ei.value.iteration is not None
