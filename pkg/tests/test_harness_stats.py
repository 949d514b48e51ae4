import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from tokencontrol.errors import LengthMismatch, NonPositivePrice, TooFewPairs
from tokencontrol.harness.metrics import control_effort, price_volatility, tracking_mse
from tokencontrol.harness.stats import wilcoxon_signed_rank


def brute_force_p(a, b):
    """Two-sided exact p by listing every sign assignment of the signed ranks."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    r = rankdata(np.abs(d))
    obs = r[d > 0].sum()
    lo = hi = 0
    total = 0
    for signs in itertools.product((0, 1), repeat=len(r)):
        w = sum(ri for ri, s in zip(r, signs) if s)
        lo += w <= obs + 1e-9
        hi += w >= obs - 1e-9
        total += 1
    return min(1.0, 2 * min(lo, hi) / total)


def test_tracking_mse():
    x = np.array([1.0, 2.0, 3.0])
    assert tracking_mse(x, x) == 0
    assert tracking_mse(x + 1, x) == pytest.approx(1)
    perm = np.array([2, 0, 1])
    y = np.array([0.5, 2.5, 2.0])
    assert tracking_mse(x[perm], y[perm]) == pytest.approx(tracking_mse(x, y))
    with pytest.raises(LengthMismatch):
        tracking_mse(x, x[:2])


def test_price_volatility():
    assert price_volatility(np.full(5, 3.0)) == 0
    assert price_volatility(2.0 ** np.arange(8)) == pytest.approx(0, abs=1e-15)
    ln2 = math.log(2)
    assert price_volatility([1, 2, 1, 2]) == pytest.approx(np.std([ln2, -ln2, ln2]))
    with pytest.raises(NonPositivePrice):
        price_volatility([1.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        price_volatility([1.0])


def test_control_effort():
    U = np.array([[2.0, 1.0, 0.5], [1.0, 1.0, 0.0]])
    assert control_effort(U, [1.0, 1.0], [1.0, 1.0]) == pytest.approx(1.0 + 0.25)


def test_wilcoxon_examples():
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    r = wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1])
    assert r.exact and r.p_value == pytest.approx(0.0625)
    r = wilcoxon_signed_rank(np.arange(10) + 1.0, np.zeros(10))
    assert r.p_value == pytest.approx(2 / 1024) and round(r.p_value, 6) == 0.001953
    r = wilcoxon_signed_rank(np.zeros(10), np.arange(10) + 1.0)
    assert r.p_value == pytest.approx(2 / 1024)


def test_wilcoxon_matches_enumeration_for_all_small_n():
    rng = np.random.default_rng(0)
    for n in range(5, 13):
        for _ in range(8):
            a = rng.normal(size=n)
            b = a + rng.normal(0.3, 1.0, size=n)
            if rng.random() < 0.5:
                # coarse rounding creates tied magnitudes
                a, b = np.round(a, 0), np.round(b, 0)
            d = a - b
            if np.count_nonzero(d) < 5:
                continue
            assert wilcoxon_signed_rank(a, b).p_value == pytest.approx(brute_force_p(a, b), rel=1e-12, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=5, max_size=10))
def test_wilcoxon_enumeration_with_ties(diffs):
    d = np.array(diffs, dtype=float)
    if np.count_nonzero(d) < 5:
        return
    assert wilcoxon_signed_rank(d, np.zeros_like(d)).p_value == pytest.approx(
        brute_force_p(d, np.zeros_like(d)), rel=1e-12)


def test_wilcoxon_large_sample_agrees_with_scipy():
    from scipy.stats import wilcoxon

    rng = np.random.default_rng(5)
    a = rng.normal(size=40)
    b = a + rng.normal(0.1, 1, size=40)
    r = wilcoxon_signed_rank(a, b)
    ref = wilcoxon(a, b, method="approx", correction=True)
    assert not r.exact
    assert r.p_value == pytest.approx(ref.pvalue, rel=1e-10)
    assert r.statistic == pytest.approx(ref.statistic)
