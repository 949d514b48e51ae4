"""Synthetic network-growth series, demand/income models and ARIMA(p, d, 0) forecasts.

Random draws use numpy's ``PCG64`` bit generator seeded explicitly, so
every generated series is a pure function of its spec.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadSpec, ParseError, RankDeficient, SchemaMismatch, TooShort

PATTERNS = ("sigmoid", "logarithmic", "exponential")

DEMAND_FLOOR = 1e-6


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    nodes: np.ndarray
    consumers: np.ndarray
    demand: np.ndarray
    income: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, f), dtype=float) for f in ("times", "nodes", "consumers", "demand", "income")]
        if len({len(a) for a in arrs}) != 1:
            raise ValueError("time series fields must have equal lengths")
        if any(np.any(a < 0) for a in arrs[1:]):
            raise ValueError("time series values must be non-negative")
        for name, a in zip(("times", "nodes", "consumers", "demand", "income"), arrs):
            object.__setattr__(self, name, a)

    def __len__(self):
        return len(self.times)

    def slice(self, start, stop) -> "TimeSeries":
        return TimeSeries(self.times[start:stop], self.nodes[start:stop], self.consumers[start:stop],
                          self.demand[start:stop], self.income[start:stop])


@dataclass(frozen=True)
class GrowthSpec:
    """Growth curves for node and consumer counts plus demand/income coefficients.

    Each count follows ``base + curve(t)`` with the curve chosen by
    ``pattern``:

    * sigmoid: ``cap / (1 + exp(-rate * (t - midpoint)))``
    * logarithmic: ``cap * ln(1 + rate * t)``
    * exponential: ``cap * exp(rate * t)``

    ``cap`` and ``rate`` apply to consumers; nodes use ``node_cap`` and
    ``node_rate`` (defaulting to the consumer values).  Gaussian noise of
    standard deviation ``noise_std`` (relative to ``cap``) is added to
    consumers and nodes before flooring at zero.
    """

    pattern: str = "sigmoid"
    cap: float = 100.0
    rate: float = 0.1
    midpoint: float = 50.0
    base: float = 0.0
    node_cap: float | None = None
    node_rate: float | None = None
    node_base: float | None = None
    noise_std: float = 0.0
    unit_demand: float = 1.0
    unit_income: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise BadSpec(f"unknown growth pattern {self.pattern!r}; expected one of {PATTERNS}")
        if not self.cap > 0:
            raise BadSpec("cap must be positive")
        if self.node_cap is not None and not self.node_cap > 0:
            raise BadSpec("node_cap must be positive")
        if self.noise_std < 0 or self.unit_demand < 0 or self.unit_income < 0:
            raise BadSpec("noise_std and unit coefficients must be non-negative")
        if not all(math.isfinite(v) for v in (self.cap, self.rate, self.midpoint, self.base)):
            raise BadSpec("growth parameters must be finite")


def growth_curve(pattern, t, cap, rate, midpoint=0.0):
    t = np.asarray(t, dtype=float)
    if pattern == "sigmoid":
        return cap / (1.0 + np.exp(-rate * (t - midpoint)))
    if pattern == "logarithmic":
        return cap * np.log1p(rate * t)
    if pattern == "exponential":
        return cap * np.exp(rate * t)
    raise BadSpec(f"unknown growth pattern {pattern!r}")


def mean_counts(spec: GrowthSpec, length: int):
    """Noise-free (nodes, consumers) curves."""
    t = np.arange(length, dtype=float)
    consumers = spec.base + growth_curve(spec.pattern, t, spec.cap, spec.rate, spec.midpoint)
    ncap = spec.cap if spec.node_cap is None else spec.node_cap
    nrate = spec.rate if spec.node_rate is None else spec.node_rate
    nbase = spec.base if spec.node_base is None else spec.node_base
    nodes = nbase + growth_curve(spec.pattern, t, ncap, nrate, spec.midpoint)
    return np.maximum(nodes, 0.0), np.maximum(consumers, 0.0)


def demand_from_consumers(consumers, unit_demand):
    return np.maximum(unit_demand * np.asarray(consumers, dtype=float), DEMAND_FLOOR)


def income_from_consumers(consumers, unit_price):
    """Income proportional to the consumer count."""
    if unit_price < 0:
        raise ValueError("unit_price must be non-negative")
    return unit_price * consumers


def generate(spec: GrowthSpec, length: int) -> TimeSeries:
    """Seeded realization of the growth pattern."""
    if length < 1:
        raise BadSpec("length must be >= 1")
    nodes, consumers = mean_counts(spec, length)
    if spec.noise_std > 0:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        sigma = spec.noise_std * spec.cap
        consumers = consumers + sigma * rng.standard_normal(length)
        nodes = nodes + sigma * rng.standard_normal(length)
    nodes = np.maximum(nodes, 0.0)
    consumers = np.maximum(consumers, 0.0)
    demand = demand_from_consumers(consumers, spec.unit_demand)
    income = income_from_consumers(consumers, spec.unit_income)
    return TimeSeries(np.arange(length, dtype=float), nodes, consumers, demand, income)


@dataclass(frozen=True)
class ARModel:
    difference_order: int
    ar_order: int
    coefficients: np.ndarray
    intercept: float
    residual_std: float
    degenerate: bool = False   # constant (differenced) series fitted by its level alone

    def __post_init__(self):
        if self.ar_order < 1 or self.difference_order < 0:
            raise ValueError("need ar_order >= 1 and difference_order >= 0")
        if self.residual_std < 0:
            raise ValueError("residual_std must be >= 0")


@dataclass(frozen=True)
class ForecastResult:
    mean_path: np.ndarray
    std_path: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.mean_path)


def fit_ar(series, difference_order: int = 0, ar_order: int = 1) -> ARModel:
    """Difference ``d`` times, then least-squares AR(p) with an intercept.

    A constant (differenced) series makes the lag columns collinear with the
    intercept; it is fitted by its level alone with zero AR coefficients and
    the model is flagged ``degenerate``.  Other collinear designs raise
    :class:`RankDeficient`.
    """
    y = np.asarray(series, dtype=float)
    d, p = difference_order, ar_order
    if p < 1 or d < 0:
        raise ValueError("need ar_order >= 1 and difference_order >= 0")
    if len(y) <= p + d + 1:
        raise TooShort(f"series of length {len(y)} too short for ARIMA({p},{d},0)")
    z = np.diff(y, n=d) if d else y
    n = len(z) - p
    X = np.column_stack([np.ones(n)] + [z[p - i - 1: len(z) - i - 1] for i in range(p)])
    target = z[p:]
    if np.ptp(z) <= 1e-12 * max(1.0, float(np.max(np.abs(z)))):
        return ARModel(d, p, np.zeros(p), float(z[-1]), 0.0, degenerate=True)
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise RankDeficient(f"design matrix has rank {rank} < {X.shape[1]} (constant or collinear series)")
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    dof = n - p - 1
    ssr = float(resid @ resid)
    std = math.sqrt(ssr / dof) if dof > 0 else 0.0
    return ARModel(d, p, beta[1:].copy(), float(beta[0]), std)


def _psi_weights(model: ARModel, horizon: int) -> np.ndarray:
    """MA(inf) weights of the integrated process ``phi(B) (1-B)^d y = e``."""
    phi = np.concatenate([[1.0], -model.coefficients])
    poly = phi
    for _ in range(model.difference_order):
        poly = np.convolve(poly, [1.0, -1.0])
    psi = np.zeros(horizon)
    psi[0] = 1.0
    for j in range(1, horizon):
        acc = 0.0
        for i in range(1, min(j, len(poly) - 1) + 1):
            acc -= poly[i] * psi[j - i]
        psi[j] = acc
    return psi


def predict(model: ARModel, history, horizon: int) -> ForecastResult:
    """Iterated one-step forecasts, re-integrated to the original level."""
    y = np.asarray(history, dtype=float)
    d, p = model.difference_order, model.ar_order
    if len(y) < p + d:
        raise TooShort(f"history of length {len(y)} shorter than p+d={p + d}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    levels = [y]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    z = list(levels[-1][-p:]) if p else []
    out = []
    for _ in range(horizon):
        nxt = model.intercept + sum(model.coefficients[i] * z[-1 - i] for i in range(p))
        z.append(nxt)
        out.append(nxt)
    path = np.array(out)
    for k in range(d, 0, -1):
        last = levels[k - 1][-1]
        path = last + np.cumsum(path)
    psi = _psi_weights(model, horizon)
    std = model.residual_std * np.sqrt(np.cumsum(psi ** 2))
    return ForecastResult(path, std)


TIMESERIES_COLUMNS = ("t", "nodes", "consumers", "demand", "income")
REQUIRED_COLUMNS = ("t", "nodes", "consumers")


def load_timeseries_csv(path, unit_demand: float = 1.0, unit_income: float = 0.05) -> TimeSeries:
    """Read ``t,nodes,consumers[,demand][,income]``.

    Missing demand/income columns are derived from consumers with the given
    coefficients.  Errors cite the 1-based file line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(list(REQUIRED_COLUMNS)) from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaMismatch(missing)
        idx = {c: header.index(c) for c in TIMESERIES_COLUMNS if c in header}
        cols = {c: [] for c in idx}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            for c, i in idx.items():
                try:
                    v = float(row[i])
                except ValueError:
                    raise ParseError(f"non-numeric value {row[i]!r} in column {c!r}", line=lineno) from None
                if not math.isfinite(v) or v < 0:
                    raise ParseError(f"value {row[i]!r} in column {c!r} must be finite and non-negative", line=lineno)
                cols[c].append(v)
    consumers = np.array(cols["consumers"])
    demand = np.array(cols["demand"]) if "demand" in cols else demand_from_consumers(consumers, unit_demand)
    income = np.array(cols["income"]) if "income" in cols else income_from_consumers(consumers, unit_income)
    return TimeSeries(np.array(cols["t"]), np.array(cols["nodes"]), consumers, demand, income)
