"""Burn-and-mint token economy: domain types and exact discrete-time dynamics.

State vector layout (index constants below)::

    x = [supply, reserve_usd, reserve_tok, price]
    u = [buyback_usd, pay_tok, incentive]
    s = [demand_hat, income_hat]

Demand is measured in dollars so that ``price = demand / supply`` is in
dollars per token.  The solvers work on plain float arrays; the dataclasses
are the public, validated view of the same numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GuardViolation, LengthMismatch, NonPositiveSupply

SUPPLY, RES_USD, RES_TOK, PRICE = 0, 1, 2, 3
BUYBACK, PAY, INCENTIVE = 0, 1, 2
DEMAND, INCOME = 0, 1

STATE_DIM = 4
CONTROL_DIM = 3

DEFAULT_PRICE_GUARD = 1e-6


@dataclass(frozen=True)
class EconomyState:
    """Aggregate treasury and market state at one timestep."""

    supply: float
    reserve_usd: float
    reserve_tok: float
    price: float

    def __post_init__(self):
        vals = (self.supply, self.reserve_usd, self.reserve_tok, self.price)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite state {vals}")
        if self.supply <= 0:
            raise NonPositiveSupply(f"supply must be positive, got {self.supply}")
        if self.price <= 0:
            raise ValueError(f"price must be positive, got {self.price}")
        if self.reserve_usd < 0 or self.reserve_tok < 0:
            raise ValueError(f"reserves must be non-negative, got {vals[1:3]}")

    def as_array(self) -> np.ndarray:
        return np.array([self.supply, self.reserve_usd, self.reserve_tok, self.price])

    @classmethod
    def from_array(cls, x) -> "EconomyState":
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class ControlInput:
    buyback_usd: float = 0.0
    pay_tok: float = 0.0
    incentive: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.buyback_usd, self.pay_tok, self.incentive)):
            raise ValueError("non-finite control")

    def as_array(self) -> np.ndarray:
        return np.array([self.buyback_usd, self.pay_tok, self.incentive])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(float(u[0]), float(u[1]), float(u[2]))


@dataclass(frozen=True)
class ForecastPoint:
    demand_hat: float
    income_hat: float

    def __post_init__(self):
        if self.demand_hat < 0 or self.income_hat < 0:
            raise ValueError("forecast values must be non-negative")


@dataclass(frozen=True)
class FeasibilityBounds:
    """Componentwise description of the feasible sets for states and controls.

    ``state_floor`` holds lower margins for (supply, reserve_usd, reserve_tok,
    price); the dollar reserve bound used is ``max(reserve_usd_min, floor)``.
    ``supply_max`` optionally caps circulating supply (fixed-supply designs).
    """

    reserve_usd_min: float = 0.0
    state_floor: tuple = (1e-6, 0.0, 0.0, 0.0)
    price_guard: float = DEFAULT_PRICE_GUARD
    supply_max: float = math.inf

    def __post_init__(self):
        if self.reserve_usd_min < 0:
            raise ValueError("reserve_usd_min must be >= 0")
        if not self.price_guard > 0:
            raise ValueError("price_guard must be > 0")
        if len(self.state_floor) != STATE_DIM:
            raise ValueError("state_floor needs one entry per state field")

    def state_lower(self) -> np.ndarray:
        lo = np.array(self.state_floor, dtype=float)
        lo[RES_USD] = max(lo[RES_USD], self.reserve_usd_min)
        return lo

    def state_upper(self) -> np.ndarray:
        return np.array([self.supply_max, np.inf, np.inf, np.inf])


@dataclass(frozen=True)
class Violation:
    name: str
    magnitude: float


@dataclass
class Trajectory:
    """States (H+1, 4), controls (H, 3) and forecasts (H+1, 2) as arrays."""

    states: np.ndarray
    controls: np.ndarray
    forecasts: np.ndarray
    consistent: bool = False
    alphas: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1, CONTROL_DIM)
        self.forecasts = np.asarray(self.forecasts, dtype=float).reshape(-1, 2)
        h = len(self.controls)
        if self.states.shape != (h + 1, STATE_DIM) or len(self.forecasts) != h + 1:
            raise LengthMismatch(
                f"inconsistent trajectory shapes: states {self.states.shape}, "
                f"controls {self.controls.shape}, forecasts {self.forecasts.shape}"
            )

    @property
    def horizon(self) -> int:
        return len(self.controls)

    def state(self, t: int) -> EconomyState:
        return EconomyState.from_array(self.states[t])

    def control(self, t: int) -> ControlInput:
        return ControlInput.from_array(self.controls[t])

    def forecast(self, t: int) -> ForecastPoint:
        return ForecastPoint(*self.forecasts[t])


def _effective_price(price, incentive, guard):
    eff = price + incentive
    if not eff >= guard:
        raise GuardViolation(f"effective price {eff!r} below guard {guard!r}")
    return eff


def tokens_bought(control: ControlInput, price: float, price_guard: float = DEFAULT_PRICE_GUARD) -> float:
    """Tokens removed from circulation by spending ``buyback_usd`` at ``price + incentive``."""
    eff = _effective_price(price, control.incentive, price_guard)
    return control.buyback_usd / eff


def market_price(demand: float, supply: float) -> float:
    if supply <= 0:
        raise NonPositiveSupply(f"supply must be positive, got {supply}")
    return demand / supply


def step_array(x, u, income_now, demand_next, price_guard=DEFAULT_PRICE_GUARD):
    """Array form of :func:`step`; returns a new length-4 array."""
    eff = x[PRICE] + u[INCENTIVE]
    if not eff >= price_guard:
        raise GuardViolation(f"effective price {eff!r} below guard {price_guard!r}")
    # net flows are formed first so that income clearing leaves S exactly fixed
    net_paid = u[PAY] - u[BUYBACK] / eff
    supply = x[SUPPLY] + net_paid
    if not supply > 0:
        raise NonPositiveSupply(f"buy-back leaves supply {supply!r}")
    return np.array([
        supply,
        x[RES_USD] + (income_now - u[BUYBACK]),
        x[RES_TOK] - net_paid,
        demand_next / supply,
    ])


def step(state: EconomyState, control: ControlInput, income_now: float, demand_next: float,
         price_guard: float = DEFAULT_PRICE_GUARD) -> EconomyState:
    """Advance the economy by one period.

    Supply grows by tokens paid and shrinks by tokens bought back; the token
    reserve mirrors it, so ``supply + reserve_tok`` is conserved.  The new
    price clears next period's demand against the new supply.
    """
    x = step_array(state.as_array(), control.as_array(), income_now, demand_next, price_guard)
    return EconomyState.from_array(x)


def vanilla_control(state: EconomyState, income: float, price_guard: float = DEFAULT_PRICE_GUARD) -> ControlInput:
    """Income-clearing policy: spend all income on buy-backs, pay out the same tokens."""
    if not state.price >= price_guard:
        raise GuardViolation(f"price {state.price!r} below guard {price_guard!r}")
    return ControlInput(buyback_usd=income, pay_tok=income / state.price, incentive=0.0)


def vanilla_array(x, income):
    return np.array([income, income / x[PRICE], 0.0])


def check_feasible(state: EconomyState, control: ControlInput, bounds: FeasibilityBounds) -> list[Violation]:
    """List every violated state/control bound with its (positive) violation size."""
    out = []
    x = state.as_array() if isinstance(state, EconomyState) else np.asarray(state, dtype=float)
    lo, hi = bounds.state_lower(), bounds.state_upper()
    names = ("supply", "reserve_usd", "reserve_tok", "price")
    for i, name in enumerate(names):
        if x[i] < lo[i]:
            out.append(Violation(f"{name}>=min", float(lo[i] - x[i])))
        if x[i] > hi[i]:
            out.append(Violation(f"{name}<=max", float(x[i] - hi[i])))
    if control.buyback_usd < 0:
        out.append(Violation("buyback_usd>=0", -control.buyback_usd))
    if control.pay_tok < 0:
        out.append(Violation("pay_tok>=0", -control.pay_tok))
    eff = x[PRICE] + control.incentive
    if eff < bounds.price_guard:
        out.append(Violation("price+incentive>=guard", float(bounds.price_guard - eff)))
    return out


def forecasts_array(points: Sequence[ForecastPoint] | np.ndarray) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return points.reshape(-1, 2).astype(float)
    return np.array([[p.demand_hat, p.income_hat] for p in points], dtype=float)
