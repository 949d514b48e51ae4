"""Wilcoxon signed-rank test with an exact null distribution for small samples."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..errors import TooFewPairs

EXACT_MAX_N = 20
MIN_PAIRS = 5


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float      # min(W+, W-)
    p_value: float        # two-sided
    n: int                # pairs after dropping zero differences
    exact: bool
    w_plus: float


def signed_ranks(a, b):
    """Non-zero differences ``a - b`` and their average ranks by magnitude."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    return d, rankdata(np.abs(d))


def exact_null_counts(ranks) -> np.ndarray:
    """Number of sign patterns giving each value of ``2*W+``.

    Ranks are doubled so that averaged ties become integers; the counts are
    built by a subset-sum recursion over the ranks (equivalent to listing
    all ``2**n`` sign assignments).
    """
    r2 = np.rint(2 * np.asarray(ranks)).astype(int)
    counts = np.zeros(int(r2.sum()) + 1, dtype=object)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired test of ``a`` against ``b``.

    Zero differences are dropped and tied magnitudes share their average
    rank.  Up to 20 pairs the p-value is exact; beyond that a normal
    approximation with continuity and tie corrections is used.
    """
    d, ranks = signed_ranks(a, b)
    n = len(d)
    if n < MIN_PAIRS:
        raise TooFewPairs(f"{n} non-zero paired differences; need at least {MIN_PAIRS}")
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2
    stat = min(w_plus, total - w_plus)
    if n <= EXACT_MAX_N:
        counts = exact_null_counts(ranks)
        k = int(round(2 * w_plus))
        denom = 2 ** n
        lower = sum(counts[: k + 1])
        upper = sum(counts[k:])
        p = min(1.0, 2 * float(min(lower, upper)) / denom)
        return WilcoxonResult(stat, p, n, True, w_plus)
    mean = total / 2
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2)))
    return WilcoxonResult(stat, p, n, False, w_plus)
