"""Experiment matrices: run scenario x controller cells, aggregate, and test."""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import economy as ec
from .. import game
from .. import simulate as sim
from ..errors import TokenControlError, TooFewPairs
from ..trajopt import OCProblem, SolveOptions
from .metrics import control_effort, price_volatility, tracking_mse
from .stats import wilcoxon_signed_rank

log = logging.getLogger(__name__)

METRICS = ("total_cost", "tracking_mse", "control_effort", "price_volatility")
PATTERNS = ("sigmoid", "logarithmic", "exponential")


@dataclass(frozen=True)
class ExperimentConfig:
    """Scenario matrix (patterns x families x seeds) and the controllers to compare.

    ``scenario_options`` are forwarded to :func:`simulate.standard_scenario`.
    """

    patterns: tuple = PATTERNS
    families: tuple = sim.FAMILIES
    seeds: tuple = (0, 1, 2, 3, 4)
    controllers: tuple = ("none", "pid", "mpc-ilqr")
    metrics: tuple = METRICS
    out_dir: str | None = None
    workers: int = 1
    scenario_options: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("patterns", "families", "seeds", "controllers", "metrics"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (self.patterns and self.families and self.seeds):
            raise ValueError("experiment needs at least one scenario")
        if len(self.controllers) < 2:
            raise ValueError("comparisons need at least two controllers")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValueError(f"unknown metrics {bad}")
        if "total_cost" not in self.metrics:
            object.__setattr__(self, "metrics", ("total_cost",) + self.metrics)

    def cells(self):
        for pattern, family, seed in itertools.product(self.patterns, self.families, self.seeds):
            for ctrl in self.controllers:
                yield pattern, family, seed, ctrl


@dataclass
class RunRow:
    scenario: str
    pattern: str
    family: str
    seed: int
    controller: str
    total_cost: float
    tracking_mse: float
    control_effort: float
    price_volatility: float
    fallback_steps: int = 0
    failed: bool = False
    error: str = ""


@dataclass
class PairwiseTest:
    controller_a: str
    controller_b: str
    metric: str
    statistic: float
    p_value: float
    n: int
    flag: str = ""


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)     # controller -> metric -> stats dict
    tests: list = field(default_factory=list)
    price_paths: dict = field(default_factory=dict)    # controller -> (scenario, prices, reference)
    flags: list = field(default_factory=list)
    controllers: tuple = ()
    metrics: tuple = METRICS

    def median(self, controller, metric="total_cost"):
        return self.aggregates[controller][metric]["median"]

    def test(self, a, b, metric="total_cost"):
        for t in self.tests:
            if {t.controller_a, t.controller_b} == {a, b} and t.metric == metric:
                return t
        raise KeyError((a, b, metric))


def _run_cell(args):
    pattern, family, seed, ctrl, options = args
    sc = sim.standard_scenario(pattern, family, seed=seed, controller=ctrl, **options)
    name = f"{pattern}/{family}/seed{seed}"
    try:
        res = sim.run_closed_loop(sc)
    except (TokenControlError, ValueError) as exc:
        nan = float("nan")
        return RunRow(name, pattern, family, seed, ctrl, nan, nan, nan, nan, 0, True, str(exc)), None
    traj = res.realized
    ref = sc.refs.price_ref[: traj.horizon + 1]
    failed = res.aborted
    row = RunRow(
        name, pattern, family, seed, ctrl,
        res.realized_total_cost,
        tracking_mse(traj.states[:, ec.PRICE], ref),
        control_effort(traj.controls, sc.refs.buyback_ref[: traj.horizon], sc.refs.pay_ref[: traj.horizon]),
        price_volatility(traj.states[:, ec.PRICE]),
        len(res.fallback_steps), failed, res.abort_reason,
    )
    return row, (traj.states[:, ec.PRICE].copy(), ref.copy())


def aggregate(rows, controllers, metrics):
    """Median and quartiles per controller and metric over non-failed runs."""
    out = {}
    for c in controllers:
        out[c] = {}
        for m in metrics:
            vals = np.array([getattr(r, m) for r in rows if r.controller == c and not r.failed], dtype=float)
            if vals.size:
                q1, med, q3 = (float(v) for v in np.percentile(vals, [25, 50, 75]))
            else:
                q1 = med = q3 = float("nan")
            out[c][m] = {"n": int(vals.size), "median": med, "q1": q1, "q3": q3, "iqr": q3 - q1}
    return out


def pairwise_tests(rows, controllers, metric="total_cost"):
    """Wilcoxon tests on per-scenario paired values for every controller pair."""
    by = {}
    for r in rows:
        if not r.failed:
            by.setdefault(r.controller, {})[r.scenario] = getattr(r, metric)
    tests = []
    for a, b in itertools.combinations(controllers, 2):
        common = sorted(set(by.get(a, {})) & set(by.get(b, {})))
        va = [by[a][s] for s in common]
        vb = [by[b][s] for s in common]
        try:
            w = wilcoxon_signed_rank(va, vb)
            tests.append(PairwiseTest(a, b, metric, w.statistic, w.p_value, w.n))
        except TooFewPairs as exc:
            tests.append(PairwiseTest(a, b, metric, float("nan"), float("nan"), len(common), f"degenerate: {exc}"))
    return tests


def compare_controllers(config: ExperimentConfig) -> MetricsReport:
    """Run the scenario matrix for every controller and compare them pairwise."""
    jobs = [cell + (dict(config.scenario_options),) for cell in config.cells()]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_run_cell, jobs))
    else:
        outputs = [_run_cell(j) for j in jobs]
    rows = [o[0] for o in outputs]
    paths = {}
    for (row, path) in outputs:
        if path is not None and row.controller not in paths:
            paths[row.controller] = (row.scenario, path[0], path[1])
    flags = [f"{r.scenario} [{r.controller}] failed: {r.error}" for r in rows if r.failed]
    flags += [f"{r.scenario} [{r.controller}] used the fallback on {r.fallback_steps} steps"
              for r in rows if r.fallback_steps]
    tests = pairwise_tests(rows, config.controllers)
    flags += [f"{t.controller_a} vs {t.controller_b}: {t.flag}" for t in tests if t.flag]
    return MetricsReport(rows, aggregate(rows, config.controllers, config.metrics), tests, paths, flags,
                         config.controllers, config.metrics)


def standard_suite() -> ExperimentConfig:
    """3 growth patterns x 3 initial-condition families x 5 seeds."""
    return ExperimentConfig()


# -- incentive game suite ---------------------------------------------------

@dataclass
class GameRow:
    name: str
    bilevel_cost: float
    hold_cost: float
    sell_cost: float
    max_kkt: float
    max_violation: float
    seconds: float


def open_loop_problem(sc: sim.Scenario, horizon: int | None = None) -> OCProblem:
    """Problem over the first ``horizon`` steps of a scenario, on the mean forecast."""
    H = sc.mpc_horizon if horizon is None else horizon
    prov = sim._Provider(replace(sc, forecast_noise=0.0))
    return OCProblem(sc.initial_state, H, prov.window(0, H), sc.refs.window(0, H), sc.weights, sc.bounds)


def game_instance(pattern: str, family: str = "balanced", horizon: int = 10, reserve_usd: float = 5000.0,
                  risk_factor: float = 0.9):
    """Open-loop game problem on the mean forecast of a standard scenario.

    The dollar reserve is large so that the sell-everything baseline is
    fundable and all three strategies are comparable.
    """
    sc = sim.standard_scenario(pattern, family, seed=0, horizon_total=horizon, mpc_horizon=horizon,
                               noise_std=0.0, reserve_usd=reserve_usd)
    return open_loop_problem(sc, horizon), game.GameParams(risk_factor=risk_factor)


def game_suite():
    return [(f"{p}/{f}", *game_instance(p, f)) for p in PATTERNS for f in ("balanced", "supply-leads")]


def run_game_suite(instances=None, opts: SolveOptions = SolveOptions()):
    rows = []
    for name, prob, params in instances or game_suite():
        t0 = time.perf_counter()
        res = game.bilevel_solve(prob, params, opts)
        dt = time.perf_counter() - t0
        rows.append(GameRow(name, res.controller_cost,
                            game.forced_alpha_cost(prob, params, 0, opts),
                            game.forced_alpha_cost(prob, params, 1, opts),
                            res.max_kkt_residual, res.max_constraint_violation, dt))
    return rows
