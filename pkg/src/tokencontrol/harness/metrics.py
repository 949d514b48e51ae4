"""Per-run evaluation metrics."""

from __future__ import annotations

import numpy as np

from ..errors import LengthMismatch, NonPositivePrice


def tracking_mse(prices, reference) -> float:
    """Mean squared deviation of the realized price from its reference."""
    p = np.asarray(prices, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape:
        raise LengthMismatch(f"price length {p.shape} != reference length {r.shape}")
    if p.size == 0:
        raise LengthMismatch("empty price series")
    return float(np.mean((p - r) ** 2))


def price_volatility(prices) -> float:
    """Sample standard deviation (ddof=0) of one-step log returns."""
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise LengthMismatch("need at least two prices")
    if np.any(~(p > 0)):
        raise NonPositivePrice("log returns need strictly positive prices")
    return float(np.std(np.diff(np.log(p))))


def control_effort(controls, buyback_ref, pay_ref) -> float:
    """Sum of squared control deviations from the reference controls.

    The incentive (third column, when present) is measured against zero.
    """
    u = np.asarray(controls, dtype=float).reshape(len(buyback_ref), -1)
    e = (u[:, 0] - buyback_ref) ** 2 + (u[:, 1] - pay_ref) ** 2
    if u.shape[1] > 2:
        e = e + u[:, 2] ** 2
    return float(np.sum(e))
