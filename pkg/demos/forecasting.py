"""Fitting the ARIMA(p,d,0) forecaster to a recorded network series.

Reads demos/configs/network_sample.csv, holds out the last 10 points and
compares the forecast (with its one-sigma band) to what happened.

    python3 demos/forecasting.py
"""

from pathlib import Path

from tokencontrol import forecast as fc

HERE = Path(__file__).parent


def main():
    series = fc.load_timeseries_csv(HERE / "configs" / "network_sample.csv")
    hold = 10
    train = series.consumers[:-hold]
    model = fc.fit_ar(train, difference_order=1, ar_order=2)
    out = fc.predict(model, train, hold)
    print("AR coefficients:", model.coefficients.round(4), " noise sd:", round(model.residual_std, 3))
    print("step   forecast      band      actual")
    for k in range(hold):
        lo, hi = out.mean_path[k] - out.std_path[k], out.mean_path[k] + out.std_path[k]
        print(f"{k + 1:4d} {out.mean_path[k]:10.1f}  [{lo:7.1f},{hi:7.1f}] {series.consumers[len(train) + k]:8.1f}")


if __name__ == "__main__":
    main()
