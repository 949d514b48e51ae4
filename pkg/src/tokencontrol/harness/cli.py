"""Command-line entry point.

Exit codes: 0 on success, 2 when an input file fails validation (config,
schema or CSV parse errors), 1 on any runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import forecast as fc
from .. import game
from .. import simulate as sim
from ..errors import ConfigError, ParseError, SchemaMismatch
from . import config as cfg
from .experiment import compare_controllers, open_loop_problem
from .report import emit_report

log = logging.getLogger("tokencontrol")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _apply_solver(sc: sim.Scenario, solver):
    if solver == "scp" and sc.controller == "mpc-ilqr":
        return sc.with_controller("mpc-scp")
    if solver == "ilqr" and sc.controller == "mpc-scp":
        return sc.with_controller("mpc-ilqr")
    return sc


def _out_dir(args, default="."):
    out = Path(args.out_dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    sc = _apply_solver(cfg.load_scenario(args.scenario, seed=args.seed), args.solver)
    res = sim.run_closed_loop(sc)
    out = _out_dir(args)
    path = sim.write_log(res, out / "run_log.csv")
    summary = {
        "scenario": sc.name, "controller": sc.controller, "steps": res.realized.horizon,
        "total_cost": res.realized_total_cost, "final_price": float(res.prices[-1]),
        "fallback_steps": len(res.fallback_steps), "aborted": res.aborted, "log": str(path),
    }
    print(json.dumps(summary, sort_keys=True))
    if res.aborted:
        print(f"run aborted: {res.abort_reason}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_compare(args) -> int:
    conf = cfg.load_experiment(args.experiment, seed=args.seed, out_dir=args.out_dir)
    if args.solver == "scp":
        conf = replace(conf, controllers=tuple("mpc-scp" if c == "mpc-ilqr" else c for c in conf.controllers))
    report = compare_controllers(conf)
    out = Path(conf.out_dir or "results")
    emit_report(report, out)
    for c in report.controllers:
        a = report.aggregates[c]["total_cost"]
        print(f"{c:12s} median cost {a['median']:.6g}  IQR {a['iqr']:.6g}  (n={a['n']})")
    for t in report.tests:
        print(f"{t.controller_a} vs {t.controller_b}: W={t.statistic:g} p={t.p_value:.4g} n={t.n} {t.flag}")
    for f in report.flags:
        print(f"warning: {f}", file=sys.stderr)
    print(f"report written to {out}")
    return EXIT_RUNTIME if any(r.failed for r in report.rows) else EXIT_OK


def cmd_game(args) -> int:
    sc = cfg.load_scenario(args.scenario, seed=args.seed)
    problem = open_loop_problem(sc)
    res = game.bilevel_solve(problem, sc.game, sc.solve_options)
    out = _out_dir(args)
    path = game.write_game_csv(res, out / "game.csv")
    print(json.dumps({"scenario": sc.name, "horizon": problem.horizon, "controller_cost": res.controller_cost,
                      "max_kkt_residual": float(res.max_kkt_residual),
                      "max_constraint_violation": float(res.max_constraint_violation),
                      "branches": sorted(set(res.kinds)), "csv": str(path)},
                     sort_keys=True))
    return EXIT_OK


FORECAST_COLUMNS = ("step", "consumers_mean", "consumers_std", "demand_mean", "income_mean", "income_std")


def cmd_forecast(args) -> int:
    series = fc.load_timeseries_csv(args.csv)
    H = args.horizon
    cons_model = fc.fit_ar(series.consumers, args.difference_order, args.ar_order)
    inc_model = fc.fit_ar(series.income, args.difference_order, args.ar_order)
    cons = fc.predict(cons_model, series.consumers, H)
    inc = fc.predict(inc_model, series.income, H)
    last = len(series) - 1
    ratio = series.demand[last] / series.consumers[last] if series.consumers[last] > 0 else 1.0
    demand = np.maximum(ratio * cons.mean_path, fc.DEMAND_FLOOR)
    rows = [[k + 1, cons.mean_path[k], cons.std_path[k], demand[k], inc.mean_path[k], inc.std_path[k]]
            for k in range(H)]
    stream = sys.stdout
    fh = None
    if args.out_dir:
        fh = (_out_dir(args) / "forecast.csv").open("w", newline="")
        stream = fh
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(FORECAST_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    finally:
        if fh is not None:
            fh.close()
    return EXIT_OK


def cmd_validate(args) -> int:
    errors = cfg.validate_file(args.scenario)
    if errors:
        for e in errors:
            print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.scenario}: ok")
    return EXIT_OK


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="override the scenario seed (experiments: shift the seed block)")
    p.add_argument("--out-dir", default=d, help="directory for CSV logs and charts")
    p.add_argument("--solver", choices=("ilqr", "scp"), default=d, help="MPC back end for mpc-* controllers")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokencontrol", description="Token-economy control experiments.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="closed-loop run of one scenario")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", parents=[common], help="run an experiment matrix and write a report")
    p.add_argument("experiment")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("game", parents=[common], help="solve the incentive game over the scenario's MPC horizon")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_game)

    p = sub.add_parser("forecast", parents=[common], help="ARIMA(p,d,0) forecast of a network CSV")
    p.add_argument("csv")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--ar-order", type=int, default=2)
    p.add_argument("--difference-order", type=int, default=1)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("validate", parents=[common], help="check a scenario or experiment file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the validation code
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "command", None) == "forecast" and args.horizon < 1:
        print("error: --horizon must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigError, SchemaMismatch, ParseError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
