"""Closed-loop runs: forecasts, controllers, receding-horizon replanning."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import economy as ec
from . import forecast as fc
from . import game
from .baselines import DEFAULT_PID_GAINS, PIDGains, PIDState, pid_policy
from .economy import ControlInput, EconomyState, FeasibilityBounds, ForecastPoint
from .errors import NonPositiveSupply, TokenControlError
from .objective import CostWeights, ReferencePath, stage_costs, total_cost
from .trajopt import OCProblem, SolveOptions, al_ilqr_solve, scp_solve

log = logging.getLogger(__name__)

CONTROLLERS = ("none", "pid", "mpc-ilqr", "mpc-scp", "mpc-bilevel")
# relative margin that keeps rounding from pushing a reserve below its floor
SAFETY = 1e-12

LOG_COLUMNS = ("t", "S", "R_usd", "R_tok", "p", "u_b", "u_p", "dp", "alpha", "stage_cost")


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one closed-loop run.

    ``growth`` drives synthetic runs; ``series`` (e.g. from
    :func:`forecast.load_timeseries_csv`) replaces it for recorded data, in
    which case forecasts come from ARIMA fits on the observed prefix.
    ``refs`` covers ``horizon_total`` steps.
    """

    initial_state: EconomyState
    horizon_total: int
    mpc_horizon: int
    refs: ReferencePath
    weights: CostWeights = CostWeights()
    bounds: FeasibilityBounds = FeasibilityBounds()
    controller: str = "none"
    growth: fc.GrowthSpec | None = None
    series: fc.TimeSeries | None = None
    game: game.GameParams = game.GameParams()
    seed: int = 0
    forecast_noise: float | None = None
    pid_gains: PIDGains = DEFAULT_PID_GAINS
    pid_scale: float | None = None
    solve_options: SolveOptions = SolveOptions()
    ar_order: int = 2
    difference_order: int = 1
    name: str = ""

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if not 1 <= self.mpc_horizon <= self.horizon_total:
            raise ValueError("need 1 <= mpc_horizon <= horizon_total")
        if self.refs.horizon < self.horizon_total:
            raise ValueError(f"references cover {self.refs.horizon} steps, need {self.horizon_total}")
        if (self.growth is None) == (self.series is None):
            raise ValueError("exactly one of growth or series must be given")
        if self.series is not None and len(self.series) < self.horizon_total + 1:
            raise ValueError("series shorter than horizon_total + 1")

    def with_controller(self, controller: str) -> "Scenario":
        return replace(self, controller=controller)


@dataclass
class ReplanSummary:
    t: int
    status: str
    cost: float
    iterations: int
    converged: bool
    fallback: bool = False
    error: str = ""
    planned_first_stage_cost: float = float("nan")


@dataclass
class MPCOutcome:
    """Solver output of one replan (``result`` is None when the fallback fired)."""

    result: object | None
    fallback: bool = False
    error: str = ""


@dataclass
class ClosedLoopResult:
    realized: ec.Trajectory
    per_step_cost: np.ndarray
    replans: list
    realized_total_cost: float
    aborted: bool = False
    abort_reason: str = ""
    fallback_steps: list = field(default_factory=list)

    @property
    def prices(self) -> np.ndarray:
        return self.realized.states[:, ec.PRICE]


def _window_problem(x0, forecast_window, refs_window, weights, bounds):
    H = len(forecast_window) - 1
    return OCProblem(x0, H, forecast_window, refs_window, weights, bounds)


def mpc_step(current_state: EconomyState, forecast_window, refs_window: ReferencePath, weights: CostWeights,
             bounds: FeasibilityBounds, solver: str = "ilqr", opts: SolveOptions = SolveOptions(),
             warm_start=None, game_params: game.GameParams | None = None):
    """Solve the window problem and return ``(first control, MPCOutcome)``.

    ``solver`` is ``ilqr`` (augmented-Lagrangian iLQR), ``scp`` or
    ``bilevel``.  Any solver error falls back to the income-clearing control.
    ``warm_start`` is an optional ``(decisions, multipliers)`` pair.
    """
    fw = ec.forecasts_array(forecast_window)
    inc_now = float(fw[0, ec.INCOME])
    try:
        prob = _window_problem(current_state, fw, refs_window, weights, bounds)
        if solver == "bilevel":
            res = game.bilevel_solve(prob, game_params or game.GameParams(), opts, greedy=False)
            u = ControlInput.from_array(res.controls[0])
            return u, MPCOutcome(res)
        init, mult = warm_start if warm_start is not None else (None, None)
        if solver == "scp":
            res = _with_warm(lambda U: scp_solve(prob, opts, initial_controls=U), init)
        elif solver == "ilqr":
            res = _with_warm(lambda U: al_ilqr_solve(prob, opts, initial_controls=U, warm_multipliers=mult
                                                     if U is not None else None), init)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        u0 = res.decisions[0]
        return ControlInput(float(u0[0]), float(u0[1]), 0.0), MPCOutcome(res)
    except (TokenControlError, np.linalg.LinAlgError) as exc:
        log.info("replan failed (%s); falling back to income clearing", exc)
        return ec.vanilla_control(current_state, inc_now, bounds.price_guard), MPCOutcome(
            None, True, f"{type(exc).__name__}: {exc}")


def _with_warm(solve, init):
    if init is None:
        return solve(None)
    try:
        return solve(init)
    except (ec.GuardViolation, NonPositiveSupply):
        return solve(None)


def _shift(prev, horizon):
    """Drop the applied first step and pad by repeating the last one."""
    if prev is None or horizon < 1:
        return None
    tail = prev[1:]
    if len(tail) == 0:
        return None
    if len(tail) < horizon:
        tail = np.concatenate([tail, np.repeat(tail[-1:], horizon - len(tail), axis=0)])
    return tail[:horizon].copy()


def _shift_multipliers(mult, horizon):
    if mult is None:
        return None
    out = {"mu": mult["mu"]}
    for key in ("x_lower", "x_upper"):
        out[key] = _shift_rows(mult[key], horizon + 1)
    for key in ("u_lower", "u_upper"):
        out[key] = _shift_rows(mult[key], horizon)
    if any(v is None for v in out.values()):
        return None
    return out


def _shift_rows(a, length):
    a = a[1:]
    if len(a) == 0:
        return None
    if len(a) < length:
        a = np.concatenate([a, np.repeat(a[-1:], length - len(a), axis=0)])
    return a[:length]


class _Provider:
    """Realized series plus the forecasts a controller sees at each step."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        T = sc.horizon_total
        if sc.growth is not None:
            g = replace(sc.growth, seed=sc.seed) if sc.growth.noise_std > 0 else sc.growth
            self.realized = fc.generate(g, T + 1)
            _, cons_mean = fc.mean_counts(sc.growth, T + max(sc.mpc_horizon, 1) + 1)
            self.mean_demand = fc.demand_from_consumers(cons_mean, sc.growth.unit_demand)
            self.mean_income = fc.income_from_consumers(cons_mean, sc.growth.unit_income)
            noise = sc.growth.noise_std if sc.forecast_noise is None else sc.forecast_noise
            self.sd_demand = noise * sc.growth.cap * sc.growth.unit_demand
            self.sd_income = noise * sc.growth.cap * sc.growth.unit_income
        else:
            self.realized = sc.series
        self.rng = np.random.Generator(np.random.PCG64([sc.seed, 1]))

    def window(self, t, H):
        """Forecast points for steps ``t..t+H``; point 0 is the realized present."""
        d_now = float(self.realized.demand[t])
        i_now = float(self.realized.income[t])
        if self.sc.growth is not None:
            d = self.mean_demand[t + 1: t + H + 1].copy()
            inc = self.mean_income[t + 1: t + H + 1].copy()
            if self.sd_demand > 0 or self.sd_income > 0:
                d += self.sd_demand * self.rng.standard_normal(H)
                inc += self.sd_income * self.rng.standard_normal(H)
            d = np.maximum(d, fc.DEMAND_FLOOR)
            inc = np.maximum(inc, 0.0)
        else:
            d, inc = self._ar_forecast(t, H)
        return np.column_stack([np.concatenate([[d_now], d]), np.concatenate([[i_now], inc])])

    def _ar_forecast(self, t, H):
        s = self.realized
        p, dord = self.sc.ar_order, self.sc.difference_order
        cons = s.consumers[: t + 1]
        inc = s.income[: t + 1]
        ratio = s.demand[t] / s.consumers[t] if s.consumers[t] > 0 else 1.0

        def fcast(y):
            try:
                model = fc.fit_ar(y, dord, p)
                return np.maximum(fc.predict(model, y, H).mean_path, 0.0)
            except (fc.TooShort, fc.RankDeficient):
                return np.full(H, y[-1])

        return np.maximum(ratio * fcast(cons), fc.DEMAND_FLOOR), fcast(inc)


def run_closed_loop(scenario: Scenario) -> ClosedLoopResult:
    """Simulate ``horizon_total`` steps under the scenario's controller.

    The plant always advances with the realized demand and income; if a
    step would drive supply non-positive the run stops and the partial
    result is flagged.
    """
    sc = scenario
    T = sc.horizon_total
    prov = _Provider(sc)
    real = prov.realized
    X = np.empty((T + 1, 4))
    X[0] = sc.initial_state.as_array()
    U = np.zeros((T, 3))
    alphas = np.full(T, np.nan)
    replans = []
    fallback_steps = []
    pid_state = PIDState()
    warm = None
    aborted, reason = False, ""
    solver = {"mpc-ilqr": "ilqr", "mpc-scp": "scp", "mpc-bilevel": "bilevel"}.get(sc.controller)
    last = T
    for t in range(T):
        state = EconomyState.from_array(X[t])
        inc_now = float(real.income[t])
        if sc.controller == "none":
            u = ec.vanilla_control(state, inc_now, sc.bounds.price_guard)
        elif sc.controller == "pid":
            fw = prov.window(t, 1)
            u = pid_policy(state, float(sc.refs.price_ref[t]), (ForecastPoint(*fw[0]), ForecastPoint(*fw[1])),
                           pid_state, sc.pid_gains, inc_now, reference_next=float(sc.refs.price_ref[t + 1]),
                           scale=sc.pid_scale, bounds=sc.bounds)
        else:
            H = min(sc.mpc_horizon, T - t)
            fw = prov.window(t, H)
            rw = sc.refs.window(t, H)
            u, out = mpc_step(state, fw, rw, sc.weights, sc.bounds, solver, sc.solve_options, warm, sc.game)
            warm = _next_warm(out, H, T - t - 1, sc.mpc_horizon)
            replans.append(_summarize(t, out, fw, rw, sc.weights))
            if out.fallback:
                fallback_steps.append(t)
            elif solver == "bilevel":
                alphas[t] = out.result.alphas[0]
        U[t] = saturate(X[t], u.as_array(), inc_now, sc.bounds)
        try:
            X[t + 1] = ec.step_array(X[t], U[t], inc_now, float(real.demand[t + 1]), sc.bounds.price_guard)
        except (NonPositiveSupply, ec.GuardViolation) as exc:
            aborted, reason, last = True, f"t={t}: {exc}", t
            break
    X, U, alphas = X[: last + 1], U[:last], alphas[:last]
    forecasts = np.column_stack([real.demand[: last + 1], real.income[: last + 1]])
    traj = ec.Trajectory(X, U, forecasts, consistent=True, alphas=alphas)
    refs = sc.refs.window(0, last)
    per_step = stage_costs(X, U, refs, sc.weights)
    return ClosedLoopResult(traj, per_step, replans, total_cost(traj, refs, sc.weights), aborted, reason,
                            fallback_steps)


def saturate(x, u, income_now, bounds: FeasibilityBounds):
    """Clip a planned control to what the reserves can actually fund.

    Solvers meet bounds only to a tolerance; the plant must not spend
    dollars below the reserve floor or pay tokens it does not hold.
    """
    u = np.array(u, dtype=float)
    floor = bounds.state_lower()
    cash = x[ec.RES_USD] + income_now
    cash_room = (cash - floor[ec.RES_USD]) - SAFETY * max(1.0, cash)
    u[ec.BUYBACK] = min(max(u[ec.BUYBACK], 0.0), max(0.0, cash_room))
    eff = x[ec.PRICE] + u[ec.INCENTIVE]
    if eff >= bounds.price_guard:
        tok = x[ec.RES_TOK] + u[ec.BUYBACK] / eff
        tok_room = (tok - floor[ec.RES_TOK]) - SAFETY * max(1.0, tok)
        u[ec.PAY] = min(max(u[ec.PAY], 0.0), max(0.0, tok_room))
    return u


def _next_warm(out: MPCOutcome, H, remaining, mpc_h):
    if out.fallback or out.result is None or not hasattr(out.result, "decisions"):
        return None
    nh = min(mpc_h, remaining)
    dec = _shift(out.result.decisions, nh)
    if dec is None:
        return None
    return dec, _shift_multipliers(out.result.multipliers, nh)


def _summarize(t, out: MPCOutcome, fw, rw, w) -> ReplanSummary:
    if out.fallback:
        return ReplanSummary(t, "fallback", float("nan"), 0, False, True, out.error)
    res = out.result
    if isinstance(res, game.BilevelResult):
        first = stage_costs(res.states[:2], res.controls[:1], rw.window(0, 1), w)[0]
        return ReplanSummary(t, "converged" if res.converged else "not_converged", res.controller_cost, 0,
                             res.converged, planned_first_stage_cost=float(first))
    full = np.column_stack([res.decisions, np.zeros(len(res.decisions))])
    first = stage_costs(res.states[:2], full[:1], rw.window(0, 1), w)[0]
    return ReplanSummary(t, res.status, res.cost, res.iterations, res.converged,
                         planned_first_stage_cost=float(first))


def write_log(result: ClosedLoopResult, path) -> Path:
    """Per-step CSV: ``t,S,R_usd,R_tok,p,u_b,u_p,dp,alpha,stage_cost`` (no control on the last row)."""
    path = Path(path)
    traj = result.realized
    H = traj.horizon
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for t in range(H + 1):
            x = traj.states[t]
            if t < H:
                u = traj.controls[t]
                a = traj.alphas[t] if traj.alphas is not None else np.nan
                ctrl = [repr(float(u[0])), repr(float(u[1])), repr(float(u[2])), "" if np.isnan(a) else repr(float(a))]
            else:
                ctrl = ["", "", "", ""]
            w.writerow([t] + [repr(float(v)) for v in x] + ctrl + [repr(float(result.per_step_cost[t]))])
    return path


# -- standard scenario families ---------------------------------------------

FAMILIES = ("demand-leads", "balanced", "supply-leads")

# initial supply relative to the market-clearing supply at the reference price
FAMILY_SUPPLY_RATIO = {"demand-leads": 0.75, "balanced": 1.0, "supply-leads": 1.5}
# growth multipliers for consumers and nodes
FAMILY_GROWTH = {"demand-leads": (1.2, 0.5), "balanced": (1.0, 1.0), "supply-leads": (0.3, 2.0)}

PATTERN_DEFAULTS = {
    "sigmoid": dict(cap=100.0, rate=0.15, midpoint=30.0, base=100.0),
    "logarithmic": dict(cap=25.0, rate=0.2, midpoint=0.0, base=100.0),
    "exponential": dict(cap=100.0, rate=0.012, midpoint=0.0, base=0.0),
}

STANDARD_WEIGHTS = CostWeights(beta_price=1000.0, beta_buyback=1.0, beta_pay=1.0)


def growth_for(pattern: str, family: str, noise_std: float = 0.02, seed: int = 0,
               horizon_total: int = 60) -> fc.GrowthSpec:
    base = dict(PATTERN_DEFAULTS[pattern])
    cmul, nmul = FAMILY_GROWTH[family]
    # scale the *growth* (not the starting level) of each count
    if pattern == "exponential":
        crate, nrate = base["rate"] * cmul, base["rate"] * nmul
        return fc.GrowthSpec("exponential", cap=base["cap"], rate=crate, node_rate=nrate,
                             noise_std=noise_std, seed=seed)
    ccap, ncap = base["cap"] * cmul, base["cap"] * nmul
    b = base["base"]
    if pattern == "sigmoid":
        # keep the starting level fixed: subtract the curve value at t=0
        c0 = ccap / (1 + np.exp(base["rate"] * base["midpoint"]))
        n0 = ncap / (1 + np.exp(base["rate"] * base["midpoint"]))
        return fc.GrowthSpec("sigmoid", cap=ccap, rate=base["rate"], midpoint=base["midpoint"], base=b - c0,
                             node_cap=ncap, node_base=b - n0, noise_std=noise_std, seed=seed)
    return fc.GrowthSpec("logarithmic", cap=ccap, rate=base["rate"], base=b, node_cap=ncap, node_base=b,
                         noise_std=noise_std, seed=seed)


def standard_scenario(pattern: str, family: str, seed: int = 0, controller: str = "none",
                      horizon_total: int = 60, mpc_horizon: int = 20, noise_std: float = 0.02,
                      reference_growth: float = 0.005, weights: CostWeights = STANDARD_WEIGHTS,
                      reserve_usd: float = 100.0, token_reserve_ratio: float = 1.0,
                      **overrides) -> Scenario:
    """One cell of the benchmark matrix.

    The initial price sits on the reference; the initial supply is the
    family's multiple of the supply that would clear initial demand at that
    price, so supply-leads economies start over-minted and demand-leads
    economies start scarce.  References rise geometrically and the
    reference controls are income clearing on the mean income.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    growth = growth_for(pattern, family, noise_std, seed, horizon_total)
    T = horizon_total
    _, cons = fc.mean_counts(growth, T + 1)
    demand = fc.demand_from_consumers(cons, growth.unit_demand)
    income = fc.income_from_consumers(cons, growth.unit_income)
    p0 = 1.0
    price_ref = p0 * (1 + reference_growth) ** np.arange(T + 1)
    refs = ReferencePath.income_clearing(price_ref, income)
    S0 = FAMILY_SUPPLY_RATIO[family] * demand[0] / p0
    x0 = EconomyState(S0, reserve_usd, token_reserve_ratio * S0, p0)
    kw = dict(initial_state=x0, horizon_total=T, mpc_horizon=min(mpc_horizon, T), refs=refs, weights=weights,
              controller=controller, growth=growth, seed=seed, name=f"{pattern}/{family}/seed{seed}")
    kw.update(overrides)
    return Scenario(**kw)
