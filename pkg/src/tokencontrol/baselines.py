"""Benchmark policies: PID feedback on the price error and the income-clearing rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import economy as ec
from .economy import ControlInput, EconomyState, FeasibilityBounds, ForecastPoint


@dataclass(frozen=True)
class PIDGains:
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(g) for g in (self.kp, self.ki, self.kd)):
            raise ValueError("PID gains must be finite")


# Coarse grid search on the sigmoid scenarios (see demos/tune_pid.py).
DEFAULT_PID_GAINS = PIDGains(kp=2.0, ki=0.0, kd=4.0)


@dataclass
class PIDState:
    """Running error sum (over past steps only) and the last error seen."""

    error_integral: float = 0.0
    previous_error: float | None = None
    integral_limit: float = math.inf

    def reset(self):
        self.error_integral = 0.0
        self.previous_error = None


def pid_raw(error_now: float, predicted_error_next: float, pid_state: PIDState, gains: PIDGains) -> float:
    """Scalar actuation ``kp*e_t + ki*sum_{j<t} e_j + kd*e_{t+1}``.

    The integral used is the one accumulated *before* this call; ``e_t`` is
    folded in afterwards (clamped to ``pid_state.integral_limit``).
    """
    out = gains.kp * error_now + gains.ki * pid_state.error_integral + gains.kd * predicted_error_next
    lim = pid_state.integral_limit
    pid_state.error_integral = min(max(pid_state.error_integral + error_now, -lim), lim)
    pid_state.previous_error = error_now
    return out


def pid_policy(state: EconomyState, reference_price: float, forecast, pid_state: PIDState,
               gains: PIDGains, income_now: float, *, reference_next: float | None = None,
               scale: float | None = None, bounds: FeasibilityBounds = FeasibilityBounds()) -> ControlInput:
    """PID steering around the income-clearing operating point.

    Parameters
    ----------
    forecast : (ForecastPoint, ForecastPoint) or None
        Current and next-step forecasts.  The next-step error is predicted as
        ``ref_next - demand_hat_next / supply`` (supply unchanged under the
        vanilla rule).  Without a forecast the derivative term falls back to
        the backward difference ``e_t - e_{t-1}``.
    scale : float, optional
        Dollars per unit of actuation; defaults to ``income_now``.

    A positive actuation (price below reference) adds ``a*scale`` dollars to
    the buy-back; a negative one adds ``|a|*scale/price`` tokens to the
    payout.  Extra spending is capped by the dollars available above the
    reserve floor, extra payouts by the token reserve.
    """
    base = ec.vanilla_control(state, income_now, bounds.price_guard)
    e = reference_price - state.price
    if forecast is not None:
        nxt: ForecastPoint = forecast[1] if isinstance(forecast, (tuple, list)) else forecast
        p_next = nxt.demand_hat / state.supply
        ref_next = reference_price if reference_next is None else reference_next
        e_next = ref_next - p_next
    else:
        prev = pid_state.previous_error
        e_next = 0.0 if prev is None else e - prev
    if not math.isfinite(pid_state.integral_limit):
        pid_state.integral_limit = 100.0 * abs(reference_price)
    a = pid_raw(e, e_next, pid_state, gains)
    scale = income_now if scale is None else scale
    buy, pay = base.buyback_usd, base.pay_tok
    if a > 0:
        floor = max(bounds.reserve_usd_min, bounds.state_floor[ec.RES_USD])
        room = max(0.0, state.reserve_usd + income_now - floor - buy)
        # keep the circulating supply above its floor as well
        supply_room = max(0.0, (state.supply - bounds.state_floor[ec.SUPPLY]) * state.price)
        buy += min(a * scale, room, supply_room)
    elif a < 0:
        pay += min(-a * scale / state.price, state.reserve_tok)
    return ControlInput(buyback_usd=buy, pay_tok=pay, incentive=0.0)


def no_control_policy(state: EconomyState, income_now: float) -> ControlInput:
    """The income-clearing benchmark (alias of :func:`economy.vanilla_control`)."""
    return ec.vanilla_control(state, income_now)
