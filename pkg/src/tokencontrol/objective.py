"""Tracking cost, reference paths, and local models of the dynamics and cost."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import economy as ec
from .economy import BUYBACK, INCENTIVE, PAY, PRICE, RES_TOK, RES_USD, SUPPLY
from .errors import GuardViolation, LengthMismatch, ParseError, SchemaMismatch


@dataclass(frozen=True)
class CostWeights:
    """Squared-error weights on price, buy-back dollars, and paid tokens.

    ``beta_supply`` is an optional extra term tracking a supply reference
    (zero by default, which reproduces the price/control-only cost).
    """

    beta_price: float = 1.0
    beta_buyback: float = 1.0
    beta_pay: float = 1.0
    beta_supply: float = 0.0

    def __post_init__(self):
        if min(self.beta_price, self.beta_buyback, self.beta_pay, self.beta_supply) < 0:
            raise ValueError("cost weights must be non-negative")

    def scaled(self, factor: float) -> "CostWeights":
        return CostWeights(self.beta_price * factor, self.beta_buyback * factor,
                           self.beta_pay * factor, self.beta_supply * factor)


class StageRef(NamedTuple):
    price: float
    buyback: float | None = None
    pay: float | None = None
    supply: float | None = None


@dataclass(frozen=True)
class ReferencePath:
    price_ref: np.ndarray
    buyback_ref: np.ndarray
    pay_ref: np.ndarray
    supply_ref: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "price_ref", np.asarray(self.price_ref, dtype=float))
        object.__setattr__(self, "buyback_ref", np.asarray(self.buyback_ref, dtype=float))
        object.__setattr__(self, "pay_ref", np.asarray(self.pay_ref, dtype=float))
        h = len(self.price_ref) - 1
        if h < 0 or len(self.buyback_ref) != h or len(self.pay_ref) != h:
            raise LengthMismatch(
                f"reference lengths {len(self.price_ref)}/{len(self.buyback_ref)}/{len(self.pay_ref)} "
                "must be H+1/H/H"
            )
        if np.any(self.price_ref <= 0):
            raise ValueError("price_ref must be positive")
        if self.supply_ref is not None:
            object.__setattr__(self, "supply_ref", np.asarray(self.supply_ref, dtype=float))
            if len(self.supply_ref) != h + 1:
                raise LengthMismatch("supply_ref must have length H+1")

    @property
    def horizon(self) -> int:
        return len(self.buyback_ref)

    def at(self, t: int) -> StageRef:
        sup = None if self.supply_ref is None else float(self.supply_ref[t])
        if t == self.horizon:
            return StageRef(float(self.price_ref[t]), supply=sup)
        return StageRef(float(self.price_ref[t]), float(self.buyback_ref[t]), float(self.pay_ref[t]), sup)

    def window(self, start: int, length: int) -> "ReferencePath":
        """References for steps ``start .. start+length`` (length controls)."""
        if start + length > self.horizon:
            raise LengthMismatch(f"window {start}+{length} exceeds reference horizon {self.horizon}")
        sup = None if self.supply_ref is None else self.supply_ref[start:start + length + 1]
        return ReferencePath(self.price_ref[start:start + length + 1],
                             self.buyback_ref[start:start + length],
                             self.pay_ref[start:start + length], sup)

    @classmethod
    def income_clearing(cls, price_ref, income) -> "ReferencePath":
        """Reference controls from the income-clearing policy evaluated on the price reference."""
        price_ref = np.asarray(price_ref, dtype=float)
        income = np.asarray(income, dtype=float)[: len(price_ref) - 1]
        return cls(price_ref, income.copy(), income / price_ref[:-1])


@dataclass(frozen=True)
class LinearizedStep:
    """``f(x, u) ~= A x + B u + offset`` around an anchor point."""

    state_jacobian: np.ndarray
    control_jacobian: np.ndarray
    affine_offset: np.ndarray


@dataclass(frozen=True)
class QuadraticStage:
    """Second-order expansion of a stage cost in deviations ``(dx, du)`` from the anchor."""

    state_hessian: np.ndarray
    control_hessian: np.ndarray
    state_linear: np.ndarray
    control_linear: np.ndarray
    constant: float

    def evaluate(self, dx, du) -> float:
        dx = np.asarray(dx, dtype=float)
        du = np.asarray(du, dtype=float)
        return float(self.constant + self.state_linear @ dx + self.control_linear @ du
                     + 0.5 * dx @ self.state_hessian @ dx + 0.5 * du @ self.control_hessian @ du)


def stage_cost_array(x, u, ref: StageRef, w: CostWeights) -> float:
    c = w.beta_price * (x[PRICE] - ref.price) ** 2
    if ref.supply is not None and w.beta_supply:
        c += w.beta_supply * (x[SUPPLY] - ref.supply) ** 2
    if u is not None and ref.buyback is not None:
        c += w.beta_buyback * (u[BUYBACK] - ref.buyback) ** 2 + w.beta_pay * (u[PAY] - ref.pay) ** 2
    return float(c)


def stage_cost(state, control, refs_at_t: StageRef, weights: CostWeights) -> float:
    """Weighted squared tracking error at one step; pass ``control=None`` for the terminal step."""
    x = state.as_array() if isinstance(state, ec.EconomyState) else state
    u = control.as_array() if isinstance(control, ec.ControlInput) else control
    return stage_cost_array(x, u, refs_at_t, weights)


def total_cost(traj: ec.Trajectory, refs: ReferencePath, weights: CostWeights) -> float:
    """Sum of stage costs for t < H plus the price-only terminal term at t = H."""
    if refs.horizon != traj.horizon:
        raise LengthMismatch(f"trajectory horizon {traj.horizon} != reference horizon {refs.horizon}")
    return float(stage_costs(traj.states, traj.controls, refs, weights).sum())


def stage_costs(states, controls, refs: ReferencePath, w: CostWeights) -> np.ndarray:
    """Vector of per-step costs (length H+1), vectorised over the horizon."""
    h = len(controls)
    out = w.beta_price * (states[:, PRICE] - refs.price_ref[: h + 1]) ** 2
    if refs.supply_ref is not None and w.beta_supply:
        out = out + w.beta_supply * (states[:, SUPPLY] - refs.supply_ref[: h + 1]) ** 2
    out[:h] += (w.beta_buyback * (controls[:, BUYBACK] - refs.buyback_ref[:h]) ** 2
                + w.beta_pay * (controls[:, PAY] - refs.pay_ref[:h]) ** 2)
    return out


def linearize_array(x, u, demand_next, price_guard=ec.DEFAULT_PRICE_GUARD):
    """Analytic Jacobians ``(A, B)`` of the one-step dynamics."""
    eff = x[PRICE] + u[INCENTIVE]
    if not eff >= price_guard:
        raise GuardViolation(f"effective price {eff!r} below guard {price_guard!r}")
    ub = u[BUYBACK]
    s_next = x[SUPPLY] + (u[PAY] - ub / eff)
    # d(supply')/d(price) == d(supply')/d(incentive) == ub / eff^2
    ds_dp = ub / eff ** 2
    ds_dub = -1.0 / eff
    A = np.eye(4)
    A[PRICE, PRICE] = 0.0
    B = np.zeros((4, 3))
    A[SUPPLY, PRICE] = ds_dp
    A[RES_TOK, PRICE] = -ds_dp
    B[SUPPLY] = (ds_dub, 1.0, ds_dp)
    B[RES_USD, BUYBACK] = -1.0
    B[RES_TOK] = (-ds_dub, -1.0, -ds_dp)
    dprice = -demand_next / s_next ** 2
    A[PRICE] = dprice * A[SUPPLY]
    B[PRICE] = dprice * B[SUPPLY]
    return A, B


def linearize_step(state, control, demand_next: float, income_now: float,
                   price_guard: float = ec.DEFAULT_PRICE_GUARD) -> LinearizedStep:
    x = state.as_array() if isinstance(state, ec.EconomyState) else np.asarray(state, dtype=float)
    u = control.as_array() if isinstance(control, ec.ControlInput) else np.asarray(control, dtype=float)
    A, B = linearize_array(x, u, demand_next, price_guard)
    fx = ec.step_array(x, u, income_now, demand_next, price_guard)
    return LinearizedStep(A, B, fx - A @ x - B @ u)


def quadratize_stage(state, control, refs_at_t: StageRef, weights: CostWeights) -> QuadraticStage:
    """Exact quadratic model of the stage cost (the cost is already quadratic)."""
    x = state.as_array() if isinstance(state, ec.EconomyState) else np.asarray(state, dtype=float)
    u = None if control is None else (
        control.as_array() if isinstance(control, ec.ControlInput) else np.asarray(control, dtype=float))
    Q = np.zeros((4, 4))
    q = np.zeros(4)
    R = np.zeros((3, 3))
    r = np.zeros(3)
    Q[PRICE, PRICE] = 2 * weights.beta_price
    q[PRICE] = 2 * weights.beta_price * (x[PRICE] - refs_at_t.price)
    if refs_at_t.supply is not None and weights.beta_supply:
        Q[SUPPLY, SUPPLY] = 2 * weights.beta_supply
        q[SUPPLY] = 2 * weights.beta_supply * (x[SUPPLY] - refs_at_t.supply)
    if u is not None and refs_at_t.buyback is not None:
        R[BUYBACK, BUYBACK] = 2 * weights.beta_buyback
        R[PAY, PAY] = 2 * weights.beta_pay
        r[BUYBACK] = 2 * weights.beta_buyback * (u[BUYBACK] - refs_at_t.buyback)
        r[PAY] = 2 * weights.beta_pay * (u[PAY] - refs_at_t.pay)
    return QuadraticStage(Q, R, q, r, stage_cost_array(x, u, refs_at_t, weights))


def fd_jacobian(dynamics: Callable, state, control, inputs=(), step_size: float = 1e-6) -> LinearizedStep:
    """Central-difference Jacobians of ``dynamics(x, u, *inputs)``.

    The perturbation for each coordinate is ``step_size * max(1, |z_i|)``.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    fx = np.asarray(dynamics(x, u, *inputs), dtype=float)
    A = np.empty((fx.size, x.size))
    B = np.empty((fx.size, u.size))
    for i in range(x.size):
        h = step_size * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        A[:, i] = (np.asarray(dynamics(x + e, u, *inputs)) - np.asarray(dynamics(x - e, u, *inputs))) / (2 * h)
    for j in range(u.size):
        h = step_size * max(1.0, abs(u[j]))
        e = np.zeros_like(u)
        e[j] = h
        B[:, j] = (np.asarray(dynamics(x, u + e, *inputs)) - np.asarray(dynamics(x, u - e, *inputs))) / (2 * h)
    return LinearizedStep(A, B, fx - A @ x - B @ u)


REFERENCE_COLUMNS = ("t", "price_ref", "buyback_ref", "pay_ref")


def load_reference_csv(path) -> ReferencePath:
    """Read ``t,price_ref,buyback_ref,pay_ref``; the final row may leave the control columns empty."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REFERENCE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaMismatch(missing)
        prices, buys, pays = [], [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                prices.append(float(row["price_ref"]))
                if row["buyback_ref"].strip() or row["pay_ref"].strip():
                    buys.append(float(row["buyback_ref"]))
                    pays.append(float(row["pay_ref"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), line=lineno) from None
    return ReferencePath(prices, buys[: len(prices) - 1], pays[: len(prices) - 1])
