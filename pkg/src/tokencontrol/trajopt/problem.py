"""Problem containers shared by the trajectory optimizers.

The solvers only see a :class:`ControlProblem`: a finite-horizon problem with
dynamics ``x[t+1] = f_t(x[t], u[t])``, a stage/terminal cost, analytic
derivatives, and componentwise bounds on states and controls.  The token
economy (:class:`TokenProblem`), plain linear-quadratic instances
(:class:`LQProblem`) and the incentive game (``tokencontrol.game``) all plug
in through it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import economy as ec
from ..economy import PRICE, RES_TOK, RES_USD, SUPPLY
from ..errors import GuardViolation, LengthMismatch, NonPositiveSupply
from ..objective import CostWeights, ReferencePath


class ControlProblem:
    """Base class; subclasses fill in dynamics, cost and derivatives.

    Attributes expected on instances: ``n``, ``m``, ``horizon``, ``x0`` and the
    bound arrays ``x_lower``/``x_upper`` of shape (H+1, n) and
    ``u_lower``/``u_upper`` of shape (H, m).  Row 0 of the state bounds is
    ignored because the initial state is fixed.
    """

    n: int
    m: int
    horizon: int
    x0: np.ndarray

    def step(self, t, x, u):
        raise NotImplementedError

    def jacobians(self, X, U):
        """Return stacked ``A`` (H, n, n) and ``B`` (H, n, m) along a trajectory."""
        raise NotImplementedError

    def costs(self, X, U):
        """Per-step costs, length H+1 (last entry is the terminal cost)."""
        raise NotImplementedError

    def cost_derivatives(self, X, U):
        """Return ``lx (H+1,n), lu (H,m), lxx (H+1,n,n), luu (H,m,m), lux (H,m,n)``."""
        raise NotImplementedError

    # -- shared helpers ---------------------------------------------------

    def rollout(self, U, x0=None):
        H = self.horizon
        X = np.empty((H + 1, self.n))
        X[0] = self.x0 if x0 is None else x0
        for t in range(H):
            try:
                X[t + 1] = self.step(t, X[t], U[t])
            except (GuardViolation, NonPositiveSupply) as exc:
                raise type(exc)(str(exc), timestep=t) from None
        return X

    def total_cost(self, X, U) -> float:
        return float(np.sum(self.costs(X, U)))

    def constraint_violation(self, X, U) -> float:
        v = 0.0
        if len(X) > 1:
            v = max(v, float(np.max(self.x_lower[1:] - X[1:], initial=0.0)),
                    float(np.max(X[1:] - self.x_upper[1:], initial=0.0)))
        if len(U):
            v = max(v, float(np.max(self.u_lower - U, initial=0.0)),
                    float(np.max(U - self.u_upper, initial=0.0)))
        return v

    def default_bounds(self):
        H, n, m = self.horizon, self.n, self.m
        self.x_lower = np.full((H + 1, n), -np.inf)
        self.x_upper = np.full((H + 1, n), np.inf)
        self.u_lower = np.full((H, m), -np.inf)
        self.u_upper = np.full((H, m), np.inf)

    def initial_guess(self):
        return np.zeros((self.horizon, self.m))

    def control_scale(self):
        """Typical magnitude per control dimension, used to size trust regions."""
        return np.ones(self.m)


class LQProblem(ControlProblem):
    """Time-varying linear dynamics with a convex quadratic cost.

    ``x[t+1] = A[t] x[t] + B[t] u[t] + c[t]``; stage cost
    ``0.5 x'Q x + q'x + 0.5 u'R u + r'u`` and terminal ``0.5 x'Q_H x + q_H'x``.
    """

    def __init__(self, A, B, Q, R, x0, q=None, r=None, c=None):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        H, n, m = self.B.shape
        if self.A.shape != (H, n, n) or self.Q.shape != (H + 1, n, n) or self.R.shape != (H, m, m):
            raise LengthMismatch("LQ problem arrays have inconsistent shapes")
        self.n, self.m, self.horizon = n, m, H
        self.x0 = np.asarray(x0, dtype=float)
        self.q = np.zeros((H + 1, n)) if q is None else np.asarray(q, dtype=float)
        self.r = np.zeros((H, m)) if r is None else np.asarray(r, dtype=float)
        self.c = np.zeros((H, n)) if c is None else np.asarray(c, dtype=float)
        self.default_bounds()

    def step(self, t, x, u):
        return self.A[t] @ x + self.B[t] @ u + self.c[t]

    def jacobians(self, X, U):
        return self.A, self.B

    def costs(self, X, U):
        out = 0.5 * np.einsum("ti,tij,tj->t", X, self.Q, X) + np.einsum("ti,ti->t", self.q, X)
        out[:-1] += 0.5 * np.einsum("ti,tij,tj->t", U, self.R, U) + np.einsum("ti,ti->t", self.r, U)
        return out

    def cost_derivatives(self, X, U):
        lx = np.einsum("tij,tj->ti", self.Q, X) + self.q
        lu = np.einsum("tij,tj->ti", self.R, U) + self.r
        return lx, lu, self.Q, self.R, np.zeros((self.horizon, self.m, self.n))


@dataclass(frozen=True)
class OCProblem:
    """A finite-horizon token-economy control problem.

    ``forecasts`` is an (H+1, 2) array of ``[demand_hat, income_hat]``.
    ``incentives`` fixes the posted premium per step (zero unless the
    incentive game chooses it).
    """

    initial_state: ec.EconomyState
    horizon: int
    forecasts: np.ndarray
    refs: ReferencePath
    weights: CostWeights
    bounds: ec.FeasibilityBounds = ec.FeasibilityBounds()
    incentives: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "forecasts", ec.forecasts_array(self.forecasts))
        if len(self.forecasts) != self.horizon + 1:
            raise LengthMismatch(f"need {self.horizon + 1} forecast points, got {len(self.forecasts)}")
        if self.refs.horizon != self.horizon:
            raise LengthMismatch(f"reference horizon {self.refs.horizon} != problem horizon {self.horizon}")
        inc = np.zeros(self.horizon) if self.incentives is None else np.asarray(self.incentives, dtype=float)
        if inc.shape != (self.horizon,):
            raise LengthMismatch("incentives must have one entry per step")
        object.__setattr__(self, "incentives", inc)


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 100
    cost_tolerance: float = 1e-6
    constraint_tolerance: float = 1e-4
    regularization_init: float = 1e-6
    line_search_shrink: float = 0.5
    line_search_steps: int = 11
    penalty_init: float = 1.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e12
    max_outer_iterations: int = 30
    trust_radius_init: float = 0.1
    state_penalty: float = 1e6
    trace_path: str | None = None

    def __post_init__(self):
        vals = (self.max_iterations, self.cost_tolerance, self.constraint_tolerance,
                self.regularization_init, self.line_search_shrink, self.penalty_init,
                self.penalty_growth, self.trust_radius_init)
        if min(vals) <= 0:
            raise ValueError("solver options must be positive")
        if not self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must be < 1")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must be > 1")


@dataclass
class SolveResult:
    states: np.ndarray
    decisions: np.ndarray
    cost: float
    iterations: int
    converged: bool
    max_constraint_violation: float
    gains: tuple
    status: str = "converged"
    trace: list = field(default_factory=list)
    trajectory: ec.Trajectory | None = None
    multipliers: dict | None = None
    cost_history: list = field(default_factory=list)


class TokenProblem(ControlProblem):
    """Adapter exposing an :class:`OCProblem` to the generic solvers.

    Decision variables are ``[buyback_usd, pay_tok]``; the incentive is held
    at ``problem.incentives[t]``.
    """

    n = 4
    m = 2

    def __init__(self, problem: OCProblem):
        self.problem = problem
        self.horizon = H = problem.horizon
        self.x0 = problem.initial_state.as_array()
        self.demand = problem.forecasts[:, ec.DEMAND]
        self.income = problem.forecasts[:, ec.INCOME]
        self.dp = problem.incentives
        self.guard = problem.bounds.price_guard
        self.w = problem.weights
        refs = problem.refs
        self.p_ref = refs.price_ref
        self.ub_ref = refs.buyback_ref
        self.up_ref = refs.pay_ref
        self.s_ref = refs.supply_ref if (refs.supply_ref is not None and self.w.beta_supply) else None
        lo = problem.bounds.state_lower()
        hi = problem.bounds.state_upper()
        self.x_lower = np.tile(lo, (H + 1, 1))
        self.x_upper = np.tile(hi, (H + 1, 1))
        # the next step divides by price + incentive
        self.x_lower[:H, PRICE] = np.maximum(self.x_lower[:H, PRICE], self.guard - self.dp)
        self.u_lower = np.zeros((H, 2))
        self.u_upper = np.full((H, 2), np.inf)
        self._hess_x = np.zeros((H + 1, 4, 4))
        self._hess_x[:, PRICE, PRICE] = 2 * self.w.beta_price
        if self.s_ref is not None:
            self._hess_x[:, SUPPLY, SUPPLY] = 2 * self.w.beta_supply
        self._hess_u = np.zeros((H, 2, 2))
        self._hess_u[:, 0, 0] = 2 * self.w.beta_buyback
        self._hess_u[:, 1, 1] = 2 * self.w.beta_pay

    def full_controls(self, U):
        return np.column_stack([U, self.dp])

    def step(self, t, x, u):
        return ec.step_array(x, (u[0], u[1], self.dp[t]), self.income[t], self.demand[t + 1], self.guard)

    def jacobians(self, X, U):
        H = self.horizon
        S = X[:H, SUPPLY]
        eff = X[:H, PRICE] + self.dp
        if np.any(~(eff >= self.guard)):
            raise GuardViolation("effective price below guard during linearization")
        ub = U[:, 0]
        s_next = S + (U[:, 1] - ub / eff)
        ds_dp = ub / eff ** 2
        ds_dub = -1.0 / eff
        dprice = -self.demand[1:] / s_next ** 2
        A = np.zeros((H, 4, 4))
        A[:, SUPPLY, SUPPLY] = 1.0
        A[:, RES_USD, RES_USD] = 1.0
        A[:, RES_TOK, RES_TOK] = 1.0
        A[:, SUPPLY, PRICE] = ds_dp
        A[:, RES_TOK, PRICE] = -ds_dp
        A[:, PRICE, SUPPLY] = dprice
        A[:, PRICE, PRICE] = dprice * ds_dp
        B = np.zeros((H, 4, 2))
        B[:, SUPPLY, 0] = ds_dub
        B[:, SUPPLY, 1] = 1.0
        B[:, RES_USD, 0] = -1.0
        B[:, RES_TOK, 0] = -ds_dub
        B[:, RES_TOK, 1] = -1.0
        B[:, PRICE, 0] = dprice * ds_dub
        B[:, PRICE, 1] = dprice
        return A, B

    def costs(self, X, U):
        w = self.w
        out = w.beta_price * (X[:, PRICE] - self.p_ref) ** 2
        if self.s_ref is not None:
            out = out + w.beta_supply * (X[:, SUPPLY] - self.s_ref) ** 2
        out[:-1] += w.beta_buyback * (U[:, 0] - self.ub_ref) ** 2 + w.beta_pay * (U[:, 1] - self.up_ref) ** 2
        return out

    def cost_derivatives(self, X, U):
        w = self.w
        lx = np.zeros((self.horizon + 1, 4))
        lx[:, PRICE] = 2 * w.beta_price * (X[:, PRICE] - self.p_ref)
        if self.s_ref is not None:
            lx[:, SUPPLY] = 2 * w.beta_supply * (X[:, SUPPLY] - self.s_ref)
        lu = np.column_stack([2 * w.beta_buyback * (U[:, 0] - self.ub_ref),
                              2 * w.beta_pay * (U[:, 1] - self.up_ref)])
        return lx, lu, self._hess_x, self._hess_u, np.zeros((self.horizon, 2, 4))

    def initial_guess(self):
        """Income-clearing controls rolled forward on the forecast."""
        H = self.horizon
        U = np.empty((H, 2))
        x = self.x0.copy()
        for t in range(H):
            inc = self.income[t]
            eff = x[PRICE] + self.dp[t]
            U[t] = (inc, inc / eff)
            x = self.step(t, x, U[t])
        return U

    def control_scale(self):
        scale = np.array([np.mean(np.abs(self.ub_ref)), np.mean(np.abs(self.up_ref))]) if self.horizon else np.ones(2)
        return np.where(scale > 0, scale, 1.0)

    def to_trajectory(self, X, U) -> ec.Trajectory:
        return ec.Trajectory(X.copy(), self.full_controls(U), self.problem.forecasts.copy(), consistent=True)


def token_problem(problem: OCProblem) -> TokenProblem:
    return problem if isinstance(problem, TokenProblem) else TokenProblem(problem)


def rollout(problem: OCProblem, controls) -> ec.Trajectory:
    """Propagate the forecast dynamics under a full control sequence.

    ``controls`` may be a sequence of :class:`ControlInput` or an (H, 3) array;
    incentives are taken from the controls, not from ``problem.incentives``.
    """
    if isinstance(controls, np.ndarray):
        U = controls.astype(float).reshape(-1, 3)
    else:
        U = np.array([c.as_array() for c in controls], dtype=float).reshape(-1, 3)
    H = problem.horizon
    if len(U) != H:
        raise LengthMismatch(f"need {H} controls, got {len(U)}")
    d = problem.forecasts[:, ec.DEMAND]
    inc = problem.forecasts[:, ec.INCOME]
    guard = problem.bounds.price_guard
    X = np.empty((H + 1, 4))
    X[0] = problem.initial_state.as_array()
    for t in range(H):
        try:
            X[t + 1] = ec.step_array(X[t], U[t], inc[t], d[t + 1], guard)
        except (GuardViolation, NonPositiveSupply) as exc:
            raise type(exc)(str(exc), timestep=t) from None
    return ec.Trajectory(X, U, problem.forecasts.copy(), consistent=True)


def write_trace(path, trace):
    """Dump iteration records ``(iteration, cost, violation, regularization)`` to CSV."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "cost", "violation", "regularization"])
        for row in trace:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
