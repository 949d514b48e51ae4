import numpy as np
import pytest

from tokencontrol import economy as ec
from tokencontrol.objective import CostWeights, ReferencePath
from tokencontrol.trajopt import LQProblem, OCProblem


def random_lq(rng, H=20, n=3, m=2):
    """Random time-varying LQ instance with PD stage costs."""
    A = np.eye(n) + 0.3 * rng.standard_normal((H, n, n))
    B = rng.standard_normal((H, n, m))
    Q = np.empty((H + 1, n, n))
    R = np.empty((H, m, m))
    for t in range(H + 1):
        M = rng.standard_normal((n, n))
        Q[t] = M @ M.T / n + 0.1 * np.eye(n)
    for t in range(H):
        M = rng.standard_normal((m, m))
        R[t] = M @ M.T / m + 0.5 * np.eye(m)
    q = rng.standard_normal((H + 1, n))
    r = rng.standard_normal((H, m))
    c = 0.1 * rng.standard_normal((H, n))
    return LQProblem(A, B, Q, R, rng.standard_normal(n), q, r, c)


def stacked_lq_oracle(p: LQProblem):
    """Minimize the LQ cost over the stacked control vector by one dense solve."""
    H, n, m = p.horizon, p.n, p.m
    # X = X0 + G U, with X0 the free response (including offsets)
    X0 = np.empty((H + 1, n))
    X0[0] = p.x0
    for t in range(H):
        X0[t + 1] = p.A[t] @ X0[t] + p.c[t]
    G = np.zeros((H + 1, n, H, m))
    for s in range(H):
        G[s + 1, :, s, :] = p.B[s]
        for t in range(s + 1, H):
            G[t + 1, :, s, :] = p.A[t] @ G[t, :, s, :]
    Gf = G.reshape((H + 1) * n, H * m)
    Qb = np.zeros(((H + 1) * n, (H + 1) * n))
    for t in range(H + 1):
        Qb[t * n:(t + 1) * n, t * n:(t + 1) * n] = p.Q[t]
    Rb = np.zeros((H * m, H * m))
    for t in range(H):
        Rb[t * m:(t + 1) * m, t * m:(t + 1) * m] = p.R[t]
    x0f, qf, rf = X0.ravel(), p.q.ravel(), p.r.ravel()
    Hess = Gf.T @ Qb @ Gf + Rb
    grad = Gf.T @ (Qb @ x0f + qf) + rf
    U = np.linalg.solve(Hess, -grad).reshape(H, m)
    return U


def token_instance(H=10, reserve_usd=100.0, supply_ratio=1.0, growth=0.01, price_ref_growth=0.005,
                   weights=CostWeights(1000.0, 1.0, 1.0), reserve_min=0.0, reserve_tok_ratio=1.0):
    """Small deterministic token-economy problem on a growing demand forecast."""
    t = np.arange(H + 1)
    demand = 100.0 * (1 + growth) ** t
    income = 0.05 * demand
    price_ref = (1 + price_ref_growth) ** t
    refs = ReferencePath.income_clearing(price_ref, income)
    S0 = supply_ratio * demand[0]
    x0 = ec.EconomyState(S0, reserve_usd, reserve_tok_ratio * S0, 1.0)
    return OCProblem(x0, H, np.column_stack([demand, income]), refs, weights,
                     ec.FeasibilityBounds(reserve_usd_min=reserve_min))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# verdict lines recorded by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_verdict(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
