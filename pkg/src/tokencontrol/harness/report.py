"""Flat-file reports: CSV tables and static SVG charts.

Floats are written with ``repr`` so that every value round-trips exactly;
recomputing the aggregates from ``runs.csv`` reproduces ``summary.csv``
bit for bit.  Nothing time-dependent is written, so re-emitting the same
report yields byte-identical files.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .experiment import MetricsReport

RUN_COLUMNS = ("scenario", "pattern", "family", "seed", "controller", "total_cost", "tracking_mse",
               "control_effort", "price_volatility", "fallback_steps", "failed", "error")
SUMMARY_COLUMNS = ("controller", "metric", "n", "median", "q1", "q3", "iqr")
TEST_COLUMNS = ("controller_a", "controller_b", "metric", "statistic", "p_value", "n", "flag")

WIDTH, HEIGHT, MARGIN = 640, 360, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def emit_report(report: MetricsReport, out_dir) -> list[Path]:
    """Write ``runs.csv``, ``summary.csv``, ``tests.csv`` and the SVG charts.

    One ``price_<controller>.svg`` is written per controller that has a
    price path, plus ``cost_boxplot.svg`` when any run succeeded.  Returns
    the paths written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    p = out / "runs.csv"
    _write_csv(p, RUN_COLUMNS, ([getattr(r, c) for c in RUN_COLUMNS] for r in report.rows))
    written.append(p)

    summary = []
    for c in report.controllers:
        for m in report.metrics:
            a = report.aggregates.get(c, {}).get(m)
            if a is not None:
                summary.append([c, m, a["n"], a["median"], a["q1"], a["q3"], a["iqr"]])
    p = out / "summary.csv"
    _write_csv(p, SUMMARY_COLUMNS, summary)
    written.append(p)

    p = out / "tests.csv"
    _write_csv(p, TEST_COLUMNS, ([getattr(t, c) for c in TEST_COLUMNS] for t in report.tests))
    written.append(p)

    for c in report.controllers:
        if c in report.price_paths:
            scenario, prices, ref = report.price_paths[c]
            p = out / f"price_{c}.svg"
            p.write_text(price_chart_svg(prices, ref, f"{c}: price vs reference ({scenario})"))
            written.append(p)

    groups = {}
    for c in report.controllers:
        vals = [r.total_cost for r in report.rows if r.controller == c and not r.failed and math.isfinite(r.total_cost)]
        if vals:
            groups[c] = vals
    if groups:
        p = out / "cost_boxplot.svg"
        p.write_text(boxplot_svg(groups, "total cost per controller (log scale)"))
        written.append(p)
    return written


def read_runs(path):
    """Parse ``runs.csv`` back into dicts with typed numeric fields."""
    rows = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            for k in ("total_cost", "tracking_mse", "control_effort", "price_volatility"):
                r[k] = float(r[k])
            r["seed"] = int(r["seed"])
            r["fallback_steps"] = int(r["fallback_steps"])
            r["failed"] = r["failed"] == "1"
            rows.append(r)
    return rows


# -- SVG --------------------------------------------------------------------

def _num(v):
    return f"{v:.2f}"


def _svg(body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
            f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">'
            f'{escape(title)}</text>\n' + "".join(body) + "</svg>\n")


def _axes(xlab, ylab, lo, hi, log=False):
    x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN // 2, MARGIN
    body = [f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>\n',
            f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>\n',
            f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12">{escape(xlab)}</text>\n',
            f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {(y0 + y1) // 2})">{escape(ylab)}</text>\n']
    for k in range(5):
        frac = k / 4
        v = lo + frac * (hi - lo)
        label = f"{10 ** v:.3g}" if log else f"{v:.3g}"
        y = y0 - frac * (y0 - y1)
        body.append(f'<text x="{x0 - 4}" y="{_num(y + 4)}" text-anchor="end" font-family="sans-serif" '
                    f'font-size="10">{label}</text>\n')
    return body


def _span(lo, hi):
    if not hi > lo:
        pad = max(abs(lo), 1.0) * 0.05
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def price_chart_svg(prices, reference, title="price vs reference") -> str:
    prices = np.asarray(prices, dtype=float)
    reference = np.asarray(reference, dtype=float)
    n = max(len(prices), 2)
    lo, hi = _span(float(min(prices.min(), reference.min())), float(max(prices.max(), reference.max())))
    x0, y0 = MARGIN, HEIGHT - MARGIN
    sx = (WIDTH - MARGIN // 2 - x0) / (n - 1)
    sy = (y0 - MARGIN) / (hi - lo)

    def poly(series, colour, dash=""):
        pts = " ".join(f"{_num(x0 + i * sx)},{_num(y0 - (v - lo) * sy)}" for i, v in enumerate(series))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline fill="none" stroke="{colour}" stroke-width="1.5"{extra} points="{pts}"/>\n'

    body = _axes("t", "price", lo, hi)
    body.append(poly(reference, "#555555", "6,4"))
    body.append(poly(prices, PALETTE[0]))
    body.append(f'<text x="{WIDTH - 150}" y="40" font-family="sans-serif" font-size="11" fill="{PALETTE[0]}">'
                'realized</text>\n')
    body.append(f'<text x="{WIDTH - 150}" y="54" font-family="sans-serif" font-size="11" fill="#555555">'
                'reference</text>\n')
    return _svg(body, title)


def boxplot_svg(groups: dict, title="cost") -> str:
    """Quartile glyphs (box q1..q3, median bar, min/max whiskers) on a log10 axis."""
    logs = {k: np.log10(np.maximum(np.asarray(v, dtype=float), 1e-300)) for k, v in groups.items()}
    lo, hi = _span(min(float(v.min()) for v in logs.values()), max(float(v.max()) for v in logs.values()))
    x0, y0 = MARGIN, HEIGHT - MARGIN
    slot = (WIDTH - MARGIN // 2 - x0) / len(logs)
    sy = (y0 - MARGIN) / (hi - lo)

    def Y(v):
        return _num(y0 - (v - lo) * sy)

    body = _axes("controller", "total cost", lo, hi, log=True)
    for i, (name, v) in enumerate(logs.items()):
        q0, q1, q2, q3, q4 = np.percentile(v, [0, 25, 50, 75, 100])
        cx = x0 + (i + 0.5) * slot
        w = min(60.0, slot * 0.4)
        colour = PALETTE[i % len(PALETTE)]
        body.append(f'<line x1="{_num(cx)}" y1="{Y(q0)}" x2="{_num(cx)}" y2="{Y(q4)}" stroke="{colour}"/>\n')
        body.append(f'<rect x="{_num(cx - w / 2)}" y="{Y(q3)}" width="{_num(w)}" '
                    f'height="{_num(max((q3 - q1) * sy, 0.5))}" fill="white" stroke="{colour}" stroke-width="1.5"/>\n')
        body.append(f'<line x1="{_num(cx - w / 2)}" y1="{Y(q2)}" x2="{_num(cx + w / 2)}" y2="{Y(q2)}" '
                    f'stroke="{colour}" stroke-width="2.5"/>\n')
        body.append(f'<text x="{_num(cx)}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" '
                    f'font-size="11">{escape(name)}</text>\n')
    return _svg(body, title)
