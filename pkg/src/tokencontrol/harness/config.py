"""JSON scenario and experiment files.

Every file carries ``schema_version`` (currently 1) and ``kind``
(``"scenario"`` or ``"experiment"``).  A scenario starts from a standard
benchmark cell (``pattern`` x ``family``) and overrides any part of it::

    {
      "schema_version": 1,
      "kind": "scenario",
      "pattern": "sigmoid",
      "family": "supply-leads",
      "controller": "mpc-ilqr",
      "seed": 3,
      "horizon_total": 60,
      "mpc_horizon": 20,
      "weights": {"beta_price": 1000, "beta_buyback": 1, "beta_pay": 1},
      "pid": {"kp": 2, "ki": 0, "kd": 4}
    }

Optional sections: ``initial_state``, ``growth`` (full growth spec),
``series_csv`` (recorded network data, replaces ``growth``),
``references_csv``, ``bounds``, ``game`` and ``solver``.  Relative paths are
resolved against the config file's directory.  An experiment lists
``patterns``, ``families``, ``seeds``, ``controllers`` and optionally
``metrics``, ``workers``, ``out_dir`` and a ``scenario`` block of shared
overrides (horizons, noise, reserves).
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from .. import forecast as fc
from .. import simulate as sim
from ..baselines import PIDGains
from ..economy import EconomyState, FeasibilityBounds
from ..errors import ConfigError, ParseError, SchemaMismatch, TokenControlError
from ..game import GameParams
from ..objective import CostWeights, ReferencePath, load_reference_csv
from ..trajopt import SolveOptions
from .experiment import METRICS, ExperimentConfig

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int_pos = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_STANDARD = {
    "horizon_total": _int_pos,
    "mpc_horizon": _int_pos,
    "noise_std": _nonneg,
    "reference_growth": _num,
    "reserve_usd": _nonneg,
    "token_reserve_ratio": _nonneg,
}

SCENARIO_SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "kind": {"const": "scenario"},
    "name": {"type": "string"},
    "pattern": {"enum": list(fc.PATTERNS)},
    "family": {"enum": list(sim.FAMILIES)},
    "controller": {"enum": list(sim.CONTROLLERS)},
    "seed": {"type": "integer", "minimum": 0},
    **_STANDARD,
    "forecast_noise": _nonneg,
    "initial_state": _obj({"supply": _pos, "reserve_usd": _nonneg, "reserve_tok": _nonneg, "price": _pos},
                          ["supply", "reserve_usd", "reserve_tok", "price"]),
    "growth": _obj({"pattern": {"enum": list(fc.PATTERNS)}, "cap": _pos, "rate": _num, "midpoint": _num,
                    "base": _num, "node_cap": _pos, "node_rate": _num, "node_base": _num, "noise_std": _nonneg,
                    "unit_demand": _nonneg, "unit_income": _nonneg}, ["pattern"]),
    "series_csv": {"type": "string"},
    "unit_demand": _nonneg,
    "unit_income": _nonneg,
    "references_csv": {"type": "string"},
    "weights": _obj({"beta_price": _nonneg, "beta_buyback": _nonneg, "beta_pay": _nonneg, "beta_supply": _nonneg}),
    "bounds": _obj({"reserve_usd_min": _nonneg, "price_guard": _pos, "supply_max": _pos,
                    "state_floor": {"type": "array", "items": _nonneg, "minItems": 4, "maxItems": 4}}),
    "pid": _obj({"kp": _num, "ki": _num, "kd": _num, "scale": _pos}),
    "game": _obj({"risk_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                  "expectation_mode": {"enum": ["plug-in", "monte-carlo"]}, "mc_samples": _int_pos,
                  "demand_std": _nonneg, "seed": {"type": "integer", "minimum": 0}}),
    "solver": _obj({"max_iterations": _int_pos, "cost_tolerance": _pos, "constraint_tolerance": _pos,
                    "max_outer_iterations": _int_pos, "trust_radius_init": _pos, "penalty_init": _pos}),
    "ar_order": _int_pos,
    "difference_order": {"type": "integer", "minimum": 0},
}, ["schema_version", "kind"])

EXPERIMENT_SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "kind": {"const": "experiment"},
    "name": {"type": "string"},
    "patterns": {"type": "array", "items": {"enum": list(fc.PATTERNS)}, "minItems": 1, "uniqueItems": True},
    "families": {"type": "array", "items": {"enum": list(sim.FAMILIES)}, "minItems": 1, "uniqueItems": True},
    "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1, "uniqueItems": True},
    "controllers": {"type": "array", "items": {"enum": list(sim.CONTROLLERS)}, "minItems": 2},
    "metrics": {"type": "array", "items": {"enum": list(METRICS)}, "minItems": 1},
    "workers": _int_pos,
    "out_dir": {"type": "string"},
    "scenario": _obj(_STANDARD),
}, ["schema_version", "kind", "patterns", "families", "seeds", "controllers"])


def read_json(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _schema_errors(data, schema):
    v = jsonschema.Draft202012Validator(schema)
    out = []
    for e in sorted(v.iter_errors(data), key=lambda e: list(map(str, e.path))):
        where = "/".join(map(str, e.path)) or "<root>"
        out.append(f"{where}: {e.message}")
    return out


def validate_scenario(data: dict) -> list[str]:
    """Schema plus semantic checks; returns human-readable errors (empty when valid)."""
    errs = _schema_errors(data, SCENARIO_SCHEMA)
    if errs:
        return errs
    T = data.get("horizon_total", 60)
    H = data.get("mpc_horizon", 20)
    if H > T:
        errs.append(f"mpc_horizon ({H}) exceeds horizon_total ({T})")
    if "growth" in data and "series_csv" in data:
        errs.append("give either growth or series_csv, not both")
    if data.get("pattern") is None and "growth" not in data and "series_csv" not in data:
        errs.append("need one of pattern, growth or series_csv")
    return errs


def validate_experiment(data: dict) -> list[str]:
    errs = _schema_errors(data, EXPERIMENT_SCHEMA)
    if errs:
        return errs
    if len(set(data["controllers"])) < 2:
        errs.append("comparisons need at least two distinct controllers")
    sc = data.get("scenario", {})
    if sc.get("mpc_horizon", 20) > sc.get("horizon_total", 60):
        errs.append("scenario.mpc_horizon exceeds scenario.horizon_total")
    return errs


def validate_file(path) -> list[str]:
    """Validate a scenario or experiment file, dispatching on ``kind``."""
    try:
        data = read_json(path)
    except ConfigError as exc:
        return [str(exc)]
    kind = data.get("kind")
    if kind == "experiment":
        return validate_experiment(data)
    if kind == "scenario":
        errs = validate_scenario(data)
        if not errs:
            try:
                scenario_from_dict(data, Path(path).parent)
            except (ConfigError, TokenControlError, ValueError, OSError) as exc:
                errs.append(str(exc))
        return errs
    return [f"kind must be 'scenario' or 'experiment', got {kind!r}"]


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def scenario_from_dict(data: dict, base_dir=".", **cli) -> sim.Scenario:
    """Build a :class:`simulate.Scenario`; ``cli`` overrides (seed, controller) win over the file."""
    errs = validate_scenario(data)
    if errs:
        raise ConfigError("invalid scenario: " + "; ".join(errs))
    d = dict(data)
    d.update({k: v for k, v in cli.items() if v is not None})
    std = {k: d[k] for k in _STANDARD if k in d}
    pattern = d.get("pattern") or d.get("growth", {}).get("pattern", "sigmoid")
    family = d.get("family", "balanced")
    try:
        sc = sim.standard_scenario(pattern, family, seed=d.get("seed", 0), controller=d.get("controller", "none"),
                                   **std)
        T = sc.horizon_total
        kw = {}
        if "name" in d:
            kw["name"] = d["name"]
        if "growth" in d:
            g = dict(d["growth"])
            g.setdefault("noise_std", std.get("noise_std", 0.02))
            kw["growth"] = fc.GrowthSpec(seed=sc.seed, **g)
        income = None
        if "series_csv" in d:
            series = fc.load_timeseries_csv(_resolve(base_dir, d["series_csv"]), d.get("unit_demand", 1.0),
                                            d.get("unit_income", 0.05))
            if len(series) < T + 1:
                raise ConfigError(f"series has {len(series)} rows; need horizon_total + 1 = {T + 1}")
            kw["series"], kw["growth"] = series, None
            income = series.income[: T + 1]
        elif "growth" in d:
            _, cons = fc.mean_counts(kw["growth"], T + 1)
            income = fc.income_from_consumers(cons, kw["growth"].unit_income)
        if "references_csv" in d:
            kw["refs"] = load_reference_csv(_resolve(base_dir, d["references_csv"]))
        elif income is not None:
            kw["refs"] = ReferencePath.income_clearing(sc.refs.price_ref, income)
        if "initial_state" in d:
            kw["initial_state"] = EconomyState(**d["initial_state"])
        elif "series_csv" in d:
            S0 = sim.FAMILY_SUPPLY_RATIO[family] * float(kw["series"].demand[0]) / sc.refs.price_ref[0]
            kw["initial_state"] = EconomyState(S0, d.get("reserve_usd", 100.0),
                                               d.get("token_reserve_ratio", 1.0) * S0, float(sc.refs.price_ref[0]))
        if "weights" in d:
            kw["weights"] = CostWeights(**{**sim.STANDARD_WEIGHTS.__dict__, **d["weights"]})
        if "bounds" in d:
            b = dict(d["bounds"])
            if "state_floor" in b:
                b["state_floor"] = tuple(b["state_floor"])
            kw["bounds"] = FeasibilityBounds(**b)
        if "pid" in d:
            p = dict(d["pid"])
            if "scale" in p:
                kw["pid_scale"] = p.pop("scale")
            kw["pid_gains"] = PIDGains(**{**sc.pid_gains.__dict__, **p})
        if "game" in d:
            kw["game"] = GameParams(**d["game"])
        if "solver" in d:
            kw["solve_options"] = SolveOptions(**d["solver"])
        for k in ("forecast_noise", "ar_order", "difference_order"):
            if k in d:
                kw[k] = d[k]
        return replace(sc, **kw)
    except (ConfigError, ParseError, SchemaMismatch):
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def load_scenario(path, **cli) -> sim.Scenario:
    path = Path(path)
    return scenario_from_dict(read_json(path), path.parent, **cli)


def experiment_from_dict(data: dict, seed=None, out_dir=None) -> ExperimentConfig:
    errs = validate_experiment(data)
    if errs:
        raise ConfigError("invalid experiment: " + "; ".join(errs))
    seeds = tuple(data["seeds"])
    if seed is not None:
        # shift the seed block so one flag re-runs the whole matrix on fresh draws
        seeds = tuple(seed + s for s in seeds)
    try:
        return ExperimentConfig(patterns=tuple(data["patterns"]), families=tuple(data["families"]), seeds=seeds,
                                controllers=tuple(data["controllers"]),
                                metrics=tuple(data.get("metrics", METRICS)),
                                out_dir=out_dir or data.get("out_dir"), workers=data.get("workers", 1),
                                scenario_options=dict(data.get("scenario", {})))
    except ValueError as exc:
        raise ConfigError(f"invalid experiment: {exc}") from exc


def load_experiment(path, seed=None, out_dir=None) -> ExperimentConfig:
    return experiment_from_dict(read_json(path), seed, out_dir)


def scenario_to_dict(pattern, family, controller="none", seed=0, **extra) -> dict:
    """Minimal scenario document for a standard cell."""
    out = {"schema_version": SCHEMA_VERSION, "kind": "scenario", "pattern": pattern, "family": family,
           "controller": controller, "seed": int(seed)}
    out.update({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in extra.items()})
    return out
