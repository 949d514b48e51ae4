import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokencontrol import forecast as fc
from tokencontrol.errors import BadSpec, ParseError, RankDeficient, SchemaMismatch, TooShort
from tokencontrol.forecast import GrowthSpec, fit_ar, generate, income_from_consumers, predict


def test_sigmoid_midpoint_and_saturation():
    s = generate(GrowthSpec("sigmoid", cap=80, rate=0.3, midpoint=20), 200)
    assert s.consumers[20] == pytest.approx(40)
    assert abs(s.consumers[199] - 80) < 1e-6 * 80


def test_other_patterns():
    t = np.arange(10)
    s = generate(GrowthSpec("logarithmic", cap=5, rate=0.5, base=1), 10)
    assert s.consumers == pytest.approx(1 + 5 * np.log1p(0.5 * t))
    s = generate(GrowthSpec("exponential", cap=2, rate=0.1, node_cap=3), 10)
    assert s.consumers == pytest.approx(2 * np.exp(0.1 * t))
    assert s.nodes == pytest.approx(3 * np.exp(0.1 * t))
    with pytest.raises(BadSpec):
        GrowthSpec("cubic")


def test_generation_is_deterministic():
    spec = GrowthSpec("sigmoid", cap=100, noise_std=0.05, seed=9)
    a, b = generate(spec, 50), generate(spec, 50)
    assert np.array_equal(a.consumers, b.consumers) and np.array_equal(a.nodes, b.nodes)
    c = generate(GrowthSpec("sigmoid", cap=100, noise_std=0.05, seed=10), 50)
    assert not np.array_equal(a.consumers, c.consumers)
    assert np.all(a.consumers >= 0) and np.all(a.demand >= fc.DEMAND_FLOOR)


def test_income_from_consumers():
    assert income_from_consumers(0, 3.0) == 0
    assert income_from_consumers(100, 0.5) == 50
    c = np.array([1.0, 2.0, 5.0])
    assert np.array_equal(income_from_consumers(2 * c, 0.7), 2 * income_from_consumers(c, 0.7))


def test_fit_noiseless_ar1():
    y = 10 * 0.5 ** np.arange(30)
    m = fit_ar(y, 0, 1)
    assert m.coefficients[0] == pytest.approx(0.5, abs=1e-12)
    assert m.intercept == pytest.approx(0, abs=1e-10)
    assert m.residual_std == pytest.approx(0, abs=1e-10)
    f = predict(m, y, 5)
    assert f.mean_path == pytest.approx(10 * 0.5 ** np.arange(30, 35), abs=1e-9)


def test_ramp_with_differencing():
    y = 3.0 + 2.0 * np.arange(20)
    m = fit_ar(y, 1, 1)
    assert m.degenerate and m.intercept == 2.0
    f = predict(m, y, 4)
    assert np.array_equal(f.mean_path, y[-1] + 2.0 * np.arange(1, 5))
    # a slightly perturbed ramp goes through the regular least-squares path
    yn = y + 0.001 * np.sin(np.arange(20))
    mn = fit_ar(yn, 1, 1)
    assert not mn.degenerate
    assert predict(mn, yn, 4).mean_path == pytest.approx(yn[-1] + 2.0 * np.arange(1, 5), abs=1e-2)


def test_constant_series_is_flagged():
    m = fit_ar(np.full(20, 4.0), 0, 1)
    assert m.degenerate and m.intercept == 4.0 and m.coefficients.tolist() == [0.0]
    assert predict(m, np.full(20, 4.0), 3).mean_path.tolist() == [4.0, 4.0, 4.0]


def test_collinear_design_is_rank_deficient():
    # period-2 alternation: the two lag columns sum to a constant
    with pytest.raises(RankDeficient):
        fit_ar(np.tile([1.0, 3.0], 15), 0, 2)


def test_too_short():
    with pytest.raises(TooShort):
        fit_ar([1.0, 2.0, 3.0], 1, 2)


def test_horizon_one_std_is_residual_std():
    rng = np.random.default_rng(1)
    y = np.cumsum(rng.standard_normal(100))
    m = fit_ar(y, 1, 2)
    assert predict(m, y, 1).std_path[0] == pytest.approx(m.residual_std)


def simulate_ar(coefs, c, n, rng, sigma=1.0):
    p = len(coefs)
    y = np.zeros(n + 200)
    for t in range(p, len(y)):
        y[t] = c + sum(coefs[i] * y[t - 1 - i] for i in range(p)) + sigma * rng.standard_normal()
    return y[200:]


def test_matches_statsmodels_autoreg():
    from statsmodels.tsa.ar_model import AutoReg

    rng = np.random.default_rng(4)
    y = simulate_ar([0.6, -0.2], 1.0, 300, rng)
    m = fit_ar(y, 0, 2)
    ref = AutoReg(y, lags=2, trend="c").fit()
    assert m.intercept == pytest.approx(ref.params[0], rel=1e-10)
    assert m.coefficients == pytest.approx(ref.params[1:], rel=1e-10)
    assert predict(m, y, 10).mean_path == pytest.approx(ref.predict(start=len(y), end=len(y) + 9), rel=1e-10)
    # differenced fit against statsmodels on the differences
    z = np.cumsum(y)
    md = fit_ar(z, 1, 2)
    refd = AutoReg(np.diff(z), lags=2, trend="c").fit()
    assert md.coefficients == pytest.approx(refd.params[1:], rel=1e-10)
    fd = refd.predict(start=len(z) - 1, end=len(z) + 8)
    assert predict(md, z, 10).mean_path == pytest.approx(z[-1] + np.cumsum(fd), rel=1e-10)


def test_recovers_coefficients_within_three_standard_errors():
    rng = np.random.default_rng(11)
    true = np.array([0.5, 0.3])
    y = simulate_ar(true, 0.5, 2000, rng)
    m = fit_ar(y, 0, 2)
    p = 2
    X = np.column_stack([np.ones(len(y) - p)] + [y[p - i - 1: len(y) - i - 1] for i in range(p)])
    se = m.residual_std * np.sqrt(np.diag(np.linalg.inv(X.T @ X)))[1:]
    assert np.all(np.abs(m.coefficients - true) < 3 * se)


@settings(max_examples=30)
@given(st.floats(-1e3, 1e3))
def test_differenced_forecast_is_shift_equivariant(shift):
    rng = np.random.default_rng(2)
    y = np.cumsum(rng.standard_normal(60)) + 50
    a = predict(fit_ar(y, 1, 2), y, 6).mean_path
    b = predict(fit_ar(y + shift, 1, 2), y + shift, 6).mean_path
    assert b == pytest.approx(a + shift, rel=1e-9, abs=1e-7)


def test_load_timeseries_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,nodes,consumers,demand,income\n0,1,10,10,0.5\n1,2,11,11,0.55\n2,3,12,12,0.6\n")
    s = fc.load_timeseries_csv(p)
    assert len(s) == 3 and s.income[2] == 0.6
    p.write_text("t,nodes,consumers\n0,1,10\n1,2,20\n")
    s = fc.load_timeseries_csv(p, unit_demand=2.0, unit_income=0.1)
    assert s.demand.tolist() == [20, 40] and s.income == pytest.approx([1, 2])


def test_csv_errors(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,consumers\n0,1\n")
    with pytest.raises(SchemaMismatch) as ei:
        fc.load_timeseries_csv(p)
    assert "nodes" in ei.value.missing and "nodes" in str(ei.value)
    rows = ["t,nodes,consumers"] + [f"{i},{i},{i}" for i in range(5)] + ["5,abc,5"]
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(ParseError) as ei:
        fc.load_timeseries_csv(p)
    assert ei.value.line == 7 and "line 7" in str(ei.value)
