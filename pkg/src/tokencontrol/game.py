"""Leader-follower incentive pricing between the reserve and token holders.

The reserve posts an incentive ``dp`` on top of the market price; holders
sell a fraction ``alpha`` of the circulating supply, maximizing

    U(alpha) = alpha * S * (p + dp) + (1 - alpha) * gamma * S * E[p_next]

which is linear in ``alpha``.  Buy-backs must match what holders are willing
to sell (``u_B = alpha * S * (p + dp)``), so the controller's problem carries
the holders' optimality conditions as constraints.  Because those conditions
split into three branches per step (hold all, sell all, indifferent), the
bilevel problem is solved as a small branch search over smooth subproblems.

KKT sign convention: with multipliers ``lam1`` for ``alpha >= 0`` and
``lam2`` for ``alpha <= 1``, both non-positive, stationarity reads
``S*(p+dp) - gamma*S*E[p_next] - lam1 + lam2 = 0``.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import economy as ec
from .economy import PRICE, RES_TOK, RES_USD, SUPPLY
from .errors import (
    BranchSearchExhausted,
    DomainError,
    GuardViolation,
    NonPositiveSupply,
    QPInfeasible,
    TrustRegionCollapsed,
)
from .objective import total_cost
from .trajopt.problem import ControlProblem, OCProblem, SolveOptions
from .trajopt.scp import scp_solve

log = logging.getLogger(__name__)

HOLD, SELL, INDIFFERENT = 0, 1, 2
KIND_NAMES = {HOLD: "hold-all", SELL: "sell-all", INDIFFERENT: "indifferent"}


@dataclass(frozen=True)
class GameParams:
    """Holder behaviour: risk factor and how ``E[p_next]`` is evaluated.

    ``demand_std`` is the forecast noise level used by the Monte-Carlo mode
    (the plug-in mode is exact because price is linear in demand).
    """

    risk_factor: float = 0.9
    expectation_mode: str = "plug-in"
    mc_samples: int = 1000
    demand_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.risk_factor <= 1:
            raise ValueError("risk_factor must lie in (0, 1]")
        if self.expectation_mode not in ("plug-in", "monte-carlo"):
            raise ValueError(f"unknown expectation_mode {self.expectation_mode!r}")
        if self.expectation_mode == "monte-carlo" and self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.demand_std < 0:
            raise ValueError("demand_std must be >= 0")


@dataclass(frozen=True)
class BestResponseResult:
    kind: str
    alpha: float
    utility: float
    duals: tuple


@dataclass
class BilevelResult:
    controls: np.ndarray            # (H, 3): buyback, pay, incentive
    alphas: np.ndarray
    controller_cost: float
    node_utilities: np.ndarray
    kinds: list = field(default_factory=list)
    duals: np.ndarray | None = None  # (H, 2)
    states: np.ndarray | None = None
    expected_prices: np.ndarray | None = None
    trajectory: ec.Trajectory | None = None
    max_kkt_residual: float = 0.0
    max_constraint_violation: float = 0.0
    converged: bool = True
    candidates: dict = field(default_factory=dict)

    @property
    def incentives(self) -> np.ndarray:
        return self.controls[:, ec.INCENTIVE]


def _tie_tolerance(price):
    return 1e-9 * max(1.0, abs(price))


def node_utility(alpha, incentive, supply, price, expected_next_price, params: GameParams) -> float:
    """Holders' value of selling ``alpha`` now and keeping the rest."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha={alpha!r} outside [0, 1]")
    g = params.risk_factor
    return float(alpha * supply * (price + incentive) + (1 - alpha) * g * supply * expected_next_price)


def expected_next_price(planned_supply, demand_mean, demand_std, params: GameParams, rng=None) -> float:
    """``E[D_next] / S_next`` (plug-in) or a Monte-Carlo average over demand draws."""
    if not planned_supply > 0:
        raise NonPositiveSupply(f"planned supply {planned_supply!r} must be positive")
    if params.expectation_mode == "plug-in" or demand_std == 0:
        return float(demand_mean / planned_supply)
    return float(_mc_demand(demand_mean, demand_std, params, rng) / planned_supply)


def _mc_demand(mean, std, params: GameParams, rng=None):
    rng = np.random.default_rng(params.seed) if rng is None else rng
    draws = mean + std * rng.standard_normal(params.mc_samples)
    return float(np.mean(np.maximum(draws, 0.0)))


def best_response(incentive, price, expected_next_price, params: GameParams, tie_break: float = 1.0,
                  supply: float = 1.0) -> BestResponseResult:
    """Holders' optimal sell fraction for a posted incentive.

    At indifference every alpha is optimal; ``tie_break`` (the fraction the
    leader wants) is returned, the usual optimistic Stackelberg convention.
    """
    g = params.risk_factor
    now = price + incentive
    later = g * expected_next_price
    margin = supply * (now - later)
    if abs(now - later) < _tie_tolerance(price):
        alpha = float(np.clip(tie_break, 0.0, 1.0))
        kind, duals = "indifferent", (0.0, 0.0)
    elif now > later:
        alpha, kind, duals = 1.0, "sell-all", (0.0, -margin)
    else:
        alpha, kind, duals = 0.0, "hold-all", (margin, 0.0)
    util = node_utility(alpha, incentive, supply, price, expected_next_price, params)
    return BestResponseResult(kind, alpha, util, duals)


def kkt_residual(alpha, incentive, duals, supply, price, expected_next_price, params: GameParams) -> dict:
    """Residuals of the holders' optimality system at ``alpha``."""
    lam1, lam2 = duals
    margin = supply * (price + incentive) - params.risk_factor * supply * expected_next_price
    return {
        "stationarity": abs(margin - lam1 + lam2),
        "primal": max(0.0, -alpha, alpha - 1.0),
        "dual_sign": max(0.0, lam1, lam2),
        "complementarity": max(abs(lam1 * alpha), abs(lam2 * (1.0 - alpha))),
    }


class GameProblem(ControlProblem):
    """Controller problem with holder-consistent buy-backs and a fixed branch per step.

    Decisions are ``[alpha, pay_tok]``.  After selling ``alpha*S`` tokens and
    paying ``pay_tok`` the supply is ``S' = (1-alpha)*S + pay_tok`` and the
    expected next price is ``E' = D_eff/S'``.  Per branch:

    * hold: ``alpha = 0``, no buy-back; incentive ``min(0, gamma*E' - p)``.
    * sell: ``alpha = 1``, incentive ``max(0, gamma*E' - p)``, buy-back ``S*max(p, gamma*E')``.
    * indifferent: incentive ``gamma*E' - p``, buy-back ``alpha*S*gamma*E'``.

    The buy-back tracking term is nonlinear in the decisions and is
    expanded Gauss-Newton style.
    """

    n = 4
    m = 2

    def __init__(self, problem: OCProblem, params: GameParams, kinds, demand_eff=None):
        self.problem = problem
        self.params = params
        H = self.horizon = problem.horizon
        self.kinds = np.asarray(kinds, dtype=int)
        if self.kinds.shape != (H,):
            raise ValueError("need one branch per step")
        self.x0 = problem.initial_state.as_array()
        self.demand = problem.forecasts[:, ec.DEMAND]
        self.income = problem.forecasts[:, ec.INCOME]
        self.demand_eff = self.demand.copy() if demand_eff is None else np.asarray(demand_eff, dtype=float)
        self.gamma = params.risk_factor
        self.guard = problem.bounds.price_guard
        self.w = problem.weights
        refs = problem.refs
        self.p_ref, self.ub_ref, self.up_ref = refs.price_ref, refs.buyback_ref, refs.pay_ref
        self.s_ref = refs.supply_ref if (refs.supply_ref is not None and self.w.beta_supply) else None
        self.x_lower = np.tile(problem.bounds.state_lower(), (H + 1, 1))
        self.x_upper = np.tile(problem.bounds.state_upper(), (H + 1, 1))
        self.u_lower = np.zeros((H, 2))
        self.u_upper = np.full((H, 2), np.inf)
        self.u_upper[:, 0] = np.where(self.kinds == HOLD, 0.0, 1.0)
        self.u_lower[:, 0] = np.where(self.kinds == SELL, 1.0, 0.0)

    # -- branch algebra (vectorised over steps) ---------------------------

    def _branch(self, S, p, a, up, t_idx):
        """Buy-back, incentive, next supply and the buy-back gradients."""
        Sn = (1 - a) * S + up
        if np.any(~(Sn > 0)):
            raise NonPositiveSupply("planned supply not positive")
        c = self.gamma * self.demand_eff[t_idx + 1]
        E_g = c / Sn                                  # gamma * E'
        kinds = self.kinds[t_idx]
        hold = kinds == HOLD
        sell_mkt = (kinds == SELL) & (p >= E_g)       # sell at market price
        # indifferent-style formula (also sell-all when gamma*E' > p)
        ub = np.where(hold, 0.0, np.where(sell_mkt, a * S * p, a * S * E_g))
        dp = np.where(hold, np.minimum(0.0, E_g - p),
                      np.where(kinds == SELL, np.maximum(0.0, E_g - p), E_g - p))
        gS = np.where(hold, 0.0, np.where(sell_mkt, a * p, c * a * up / Sn ** 2))
        gp = np.where(sell_mkt, a * S, 0.0)
        ga = np.where(hold, 0.0, np.where(sell_mkt, S * p, c * S * (S + up) / Sn ** 2))
        gu = np.where(hold | sell_mkt, 0.0, -c * a * S / Sn ** 2)
        return ub, dp, Sn, gS, gp, ga, gu

    def step(self, t, x, u):
        S, Rd, Rt, p = x
        a, up = u
        ub, dp, Sn, *_ = self._branch(np.array([S]), np.array([p]), np.array([a]), np.array([up]),
                                      np.array([t]))
        if not p + dp[0] >= self.guard:
            raise GuardViolation(f"effective price {p + dp[0]!r} below guard", timestep=t)
        Sn = float(Sn[0])
        return np.array([Sn, Rd + (self.income[t] - ub[0]), Rt + (a * S - up), self.demand[t + 1] / Sn])

    def buybacks(self, X, U):
        t = np.arange(self.horizon)
        ub, dp, *_ = self._branch(X[:-1, SUPPLY], X[:-1, PRICE], U[:, 0], U[:, 1], t)
        return ub, dp

    def jacobians(self, X, U):
        H = self.horizon
        S, p = X[:H, SUPPLY], X[:H, PRICE]
        a, up = U[:, 0], U[:, 1]
        _, _, Sn, gS, gp, ga, gu = self._branch(S, p, a, up, np.arange(H))
        dprice = -self.demand[1:] / Sn ** 2
        A = np.zeros((H, 4, 4))
        B = np.zeros((H, 4, 2))
        A[:, SUPPLY, SUPPLY] = 1 - a
        B[:, SUPPLY, 0] = -S
        B[:, SUPPLY, 1] = 1.0
        A[:, RES_USD, RES_USD] = 1.0
        A[:, RES_USD, SUPPLY] = -gS
        A[:, RES_USD, PRICE] = -gp
        B[:, RES_USD, 0] = -ga
        B[:, RES_USD, 1] = -gu
        A[:, RES_TOK, RES_TOK] = 1.0
        A[:, RES_TOK, SUPPLY] = a
        B[:, RES_TOK, 0] = S
        B[:, RES_TOK, 1] = -1.0
        A[:, PRICE, SUPPLY] = dprice * (1 - a)
        B[:, PRICE, 0] = dprice * -S
        B[:, PRICE, 1] = dprice
        return A, B

    def costs(self, X, U):
        w = self.w
        ub, _ = self.buybacks(X, U)
        out = w.beta_price * (X[:, PRICE] - self.p_ref) ** 2
        if self.s_ref is not None:
            out = out + w.beta_supply * (X[:, SUPPLY] - self.s_ref) ** 2
        out[:-1] += w.beta_buyback * (ub - self.ub_ref) ** 2 + w.beta_pay * (U[:, 1] - self.up_ref) ** 2
        return out

    def cost_derivatives(self, X, U):
        H = self.horizon
        w = self.w
        S, p = X[:H, SUPPLY], X[:H, PRICE]
        ub, _, _, gS, gp, ga, gu = self._branch(S, p, U[:, 0], U[:, 1], np.arange(H))
        r = ub - self.ub_ref
        gx = np.zeros((H, 4))
        gx[:, SUPPLY] = gS
        gx[:, PRICE] = gp
        gv = np.column_stack([ga, gu])
        lx = np.zeros((H + 1, 4))
        lx[:, PRICE] = 2 * w.beta_price * (X[:, PRICE] - self.p_ref)
        lxx = np.zeros((H + 1, 4, 4))
        lxx[:, PRICE, PRICE] = 2 * w.beta_price
        if self.s_ref is not None:
            lx[:, SUPPLY] = 2 * w.beta_supply * (X[:, SUPPLY] - self.s_ref)
            lxx[:, SUPPLY, SUPPLY] = 2 * w.beta_supply
        b2 = 2 * w.beta_buyback
        lx[:H] += b2 * r[:, None] * gx
        lxx[:H] += b2 * gx[:, :, None] * gx[:, None, :]
        lu = b2 * r[:, None] * gv
        lu[:, 1] += 2 * w.beta_pay * (U[:, 1] - self.up_ref)
        luu = b2 * gv[:, :, None] * gv[:, None, :]
        luu[:, 1, 1] += 2 * w.beta_pay
        # small curvature on alpha keeps hold steps (alpha pinned) well posed
        luu[:, 0, 0] += 1e-9
        lux = b2 * gv[:, :, None] * gx[:, None, :]
        return lx, lu, lxx, luu, lux

    def initial_guess(self):
        """Roughly income-sized buy-backs with a supply-preserving payout."""
        H = self.horizon
        U = np.empty((H, 2))
        x = self.x0.copy()
        for t in range(H):
            S, p = x[SUPPLY], x[PRICE]
            inc = self.income[t]
            a = float(np.clip(inc / max(S * p, 1e-12), self.u_lower[t, 0], self.u_upper[t, 0]))
            U[t] = (a, max(a * S, 1e-6 * S))
            x = self.step(t, x, U[t])
        return U

    def control_scale(self):
        up = float(np.mean(np.abs(self.up_ref))) if self.horizon else 1.0
        return np.array([1.0, up if up > 0 else 1.0])

    def to_trajectory(self, X, U):
        ub, dp = self.buybacks(X, U)
        controls = np.column_stack([ub, U[:, 1], dp])
        return ec.Trajectory(X.copy(), controls, self.problem.forecasts.copy(), consistent=True,
                             alphas=U[:, 0].copy())


def _effective_demand(problem: OCProblem, params: GameParams):
    d = problem.forecasts[:, ec.DEMAND].copy()
    if params.expectation_mode == "monte-carlo" and params.demand_std > 0:
        rng = np.random.default_rng(params.seed)
        d = np.array([_mc_demand(v, params.demand_std, params, rng) for v in d])
    return d


def _solve_pattern(problem, params, kinds, opts, demand_eff, initial=None):
    gp = GameProblem(problem, params, kinds, demand_eff)
    init = None
    if initial is not None:
        init = np.column_stack([np.clip(initial[:, 0], gp.u_lower[:, 0], gp.u_upper[:, 0]),
                                np.maximum(initial[:, 1], 0.0)])
        try:
            gp.rollout(init)
        except (GuardViolation, NonPositiveSupply):
            init = None
    try:
        res = scp_solve(gp, opts, initial_controls=init)
    except (QPInfeasible, TrustRegionCollapsed, GuardViolation, NonPositiveSupply) as exc:
        log.debug("branch pattern %s failed: %s", kinds, exc)
        return gp, None
    return gp, res


def _feasible(res, opts):
    return res is not None and res.max_constraint_violation <= opts.constraint_tolerance


def _assemble(gp: GameProblem, res, params: GameParams, candidates) -> BilevelResult:
    X, U = res.states, res.decisions
    H = gp.horizon
    ub, dp = gp.buybacks(X, U)
    controls = np.column_stack([ub, U[:, 1], dp])
    alphas = U[:, 0].copy()
    S, p = X[:H, SUPPLY], X[:H, PRICE]
    Sn = (1 - alphas) * S + U[:, 1]
    E = gp.demand_eff[1:] / Sn
    kinds, duals, utils = [], np.zeros((H, 2)), np.zeros(H)
    worst = 0.0
    for t in range(H):
        br = best_response(dp[t], p[t], E[t], params, tie_break=alphas[t], supply=S[t])
        if abs(br.alpha - alphas[t]) > 1e-9:
            raise BranchSearchExhausted(f"t={t}: returned alpha {alphas[t]} is not a best response")
        kinds.append(br.kind)
        duals[t] = br.duals
        utils[t] = br.utility
        worst = max(worst, max(kkt_residual(alphas[t], dp[t], br.duals, S[t], p[t], E[t], params).values()))
    # replay through the plain economy dynamics
    prob = gp.problem
    Xr = np.empty_like(X)
    Xr[0] = X[0]
    for t in range(H):
        Xr[t + 1] = ec.step_array(Xr[t], controls[t], gp.income[t], gp.demand[t + 1], gp.guard)
    traj = ec.Trajectory(Xr, controls, prob.forecasts.copy(), consistent=True, alphas=alphas)
    cost = total_cost(traj, prob.refs, prob.weights)
    return BilevelResult(controls, alphas, cost, utils, kinds, duals, Xr, E, traj, worst,
                         res.max_constraint_violation, res.converged, candidates)


def bilevel_solve(problem: OCProblem, params: GameParams = GameParams(), opts: SolveOptions = SolveOptions(),
                  greedy: bool = True) -> BilevelResult:
    """Equilibrium incentives by branch search over the holders' optimality conditions.

    The all-indifferent pattern (which contains the hold/sell endpoints as
    ``alpha`` in {0, 1}) is solved first, then the all-hold and all-sell
    patterns; optionally a greedy pass flips one step's branch at a time and
    keeps any improvement.  The lowest-cost feasible pattern is returned.
    """
    H = problem.horizon
    demand_eff = _effective_demand(problem, params)
    candidates = {}
    best = None

    def consider(label, kinds, initial=None):
        nonlocal best
        gp, res = _solve_pattern(problem, params, kinds, opts, demand_eff, initial)
        ok = _feasible(res, opts)
        candidates[label] = res.cost if ok else np.inf
        if ok and (best is None or res.cost < best[2].cost - 1e-12 * abs(best[2].cost)):
            best = (np.array(kinds), gp, res)
            return True
        return False

    consider("indifferent", np.full(H, INDIFFERENT))
    consider("hold", np.full(H, HOLD))
    consider("sell", np.full(H, SELL))
    if best is None:
        raise BranchSearchExhausted("no branch pattern produced a feasible solution")
    if greedy:
        for t in range(H):
            for k in (HOLD, SELL, INDIFFERENT):
                if k == best[0][t]:
                    continue
                kinds = best[0].copy()
                kinds[t] = k
                consider(f"flip{t}:{KIND_NAMES[k]}", kinds, best[2].decisions)
    return _assemble(best[1], best[2], params, candidates)


def forced_alpha_cost(problem: OCProblem, params: GameParams, alpha: int, opts: SolveOptions = SolveOptions()):
    """Optimal controller cost when holders always hold (0) or always sell (1)."""
    kinds = np.full(problem.horizon, HOLD if alpha == 0 else SELL)
    gp, res = _solve_pattern(problem, params, kinds, opts, _effective_demand(problem, params))
    if not _feasible(res, opts):
        return np.inf
    return _assemble(gp, res, params, {}).controller_cost


def consistent_alpha(supply, price, incentive, pay, demand_eff, params: GameParams) -> float:
    """Holders' equilibrium sell fraction when ``E'`` depends on what they sell.

    Selling more raises the expected price, so the response is the fraction
    at which ``p + dp = gamma * D / S'``, clipped to [0, 1].
    """
    eff = price + incentive
    target = params.risk_factor * demand_eff / eff
    return float(np.clip((supply + pay - target) / supply, 0.0, 1.0))


def _rollout_path(problem, params, dps, pays, demand_eff, penalty):
    H = problem.horizon
    d = problem.forecasts[:, ec.DEMAND]
    inc = problem.forecasts[:, ec.INCOME]
    guard = problem.bounds.price_guard
    X = np.empty((H + 1, 4))
    X[0] = problem.initial_state.as_array()
    U = np.empty((H, 3))
    alphas = np.empty(H)
    for t in range(H):
        S, p = X[t, SUPPLY], X[t, PRICE]
        if not p + dps[t] >= guard:
            return None
        a = consistent_alpha(S, p, dps[t], pays[t], demand_eff[t + 1], params)
        U[t] = (a * S * (p + dps[t]), pays[t], dps[t])
        alphas[t] = a
        try:
            X[t + 1] = ec.step_array(X[t], U[t], inc[t], d[t + 1], guard)
        except (GuardViolation, NonPositiveSupply):
            return None
    traj = ec.Trajectory(X, U, problem.forecasts.copy(), consistent=True, alphas=alphas)
    J = total_cost(traj, problem.refs, problem.weights)
    lo = problem.bounds.state_lower()
    hi = problem.bounds.state_upper()
    viol = max(0.0, float(np.max(lo - X[1:])), float(np.max(X[1:] - hi)))
    return J + penalty * viol, J, traj


def rollout_incentive_search(problem: OCProblem, params: GameParams, incentive_grid, pay_grid=None,
                             per_step: bool | None = None, penalty: float = 1e6) -> BilevelResult:
    """Grid search over incentive paths with holder-consistent responses.

    Each candidate path is rolled out with the equilibrium sell fraction at
    every step and scored by the controller cost (plus a penalty on bound
    violations).  Incentive paths are constant across steps, or the full
    per-step product grid when ``per_step`` (default for horizons up to 3).
    Payouts follow the reference unless ``pay_grid`` is given, in which case
    they are searched jointly (constant per step).
    """
    grid = np.atleast_1d(np.asarray(incentive_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("incentive grid must be non-empty")
    H = problem.horizon
    per_step = H <= 3 if per_step is None else per_step
    demand_eff = _effective_demand(problem, params)
    dp_paths = itertools.product(grid, repeat=H) if per_step else ((g,) * H for g in grid)
    pay_options = [problem.refs.pay_ref] if pay_grid is None else [np.full(H, v) for v in pay_grid]
    best = None
    for dps in dp_paths:
        dps = np.asarray(dps)
        for pays in pay_options:
            out = _rollout_path(problem, params, dps, pays, demand_eff, penalty)
            if out is not None and (best is None or out[0] < best[0]):
                best = out
    if best is None:
        raise BranchSearchExhausted("every grid path violated the price guard")
    _, J, traj = best
    S = traj.states[:H, SUPPLY]
    p = traj.states[:H, PRICE]
    dp = traj.controls[:, ec.INCENTIVE]
    Sn = (1 - traj.alphas) * S + traj.controls[:, ec.PAY]
    E = demand_eff[1:] / Sn
    kinds, duals, utils = [], np.zeros((H, 2)), np.zeros(H)
    for t in range(H):
        br = best_response(dp[t], p[t], E[t], params, tie_break=traj.alphas[t], supply=S[t])
        kinds.append(br.kind)
        duals[t] = br.duals
        utils[t] = br.utility
    return BilevelResult(traj.controls.copy(), traj.alphas.copy(), J, utils, kinds, duals,
                         traj.states.copy(), E, traj)


GAME_CSV_COLUMNS = ("t", "dp_star", "alpha_star", "utility", "branch")


def write_game_csv(result: BilevelResult, path) -> Path:
    """Per-step equilibrium export: ``t,dp_star,alpha_star,utility,branch``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAME_CSV_COLUMNS)
        for t in range(len(result.alphas)):
            w.writerow([t, repr(float(result.incentives[t])), repr(float(result.alphas[t])),
                        repr(float(result.node_utilities[t])), result.kinds[t]])
    return path
