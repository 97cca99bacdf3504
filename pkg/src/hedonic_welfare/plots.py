"""Self-contained SVG line charts for the two result figures.

Charts are written directly as SVG text (no plotting dependency) so output
files are reproducible byte for byte:

frontier_change.svg   weekly rent against school score under the pre- and
                      post-change frontiers, with the crossing point marked
                      where the two schedules meet.
cv_by_quantile.svg    CV against the preference quantile tau, one polyline
                      per income column.

Each chart ships with a CSV twin of the plotted series for external tools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import _write_csv, format_number

__all__ = ["Series", "line_chart_svg", "frontier_series", "frontier_crossing", "cv_series"]

PALETTE = ("#1f6fb4", "#d95f02", "#2a9d50", "#7a4fa3", "#c23b59", "#5b5b5b")
WIDTH, HEIGHT = 720, 480
MARGIN = {"left": 72, "right": 24, "top": 48, "bottom": 56}


@dataclass(frozen=True)
class Series:
    label: str
    xs: tuple
    ys: tuple


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt_coord(v):
    return f"{v:.2f}"


def _fmt_label(v):
    return f"{v:.6g}"


def line_chart_svg(series, title, xlabel, ylabel, markers=()):
    """Render polyline series into a standalone SVG document string.

    markers: iterable of (x, y, label) points drawn as annotated circles.
    """
    series = list(series)
    all_x = [x for s in series for x in s.xs] + [m[0] for m in markers]
    all_y = [y for s in series for y in s.ys] + [m[1] for m in markers]
    if not all_x:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo -= pad_y
    y_hi += pad_y

    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN["top"] + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]
    # axes
    x0, y0 = MARGIN["left"], MARGIN["top"] + plot_h
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="#222222" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="#222222" stroke-width="1"/>'
    )
    for tx in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{_fmt_coord(px(tx))}" y1="{y0}" x2="{_fmt_coord(px(tx))}" y2="{y0 + 5}" '
            f'stroke="#222222" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt_coord(px(tx))}" y="{y0 + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt_label(tx)}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        parts.append(
            f'<line x1="{x0 - 5}" y1="{_fmt_coord(py(ty))}" x2="{x0}" y2="{_fmt_coord(py(ty))}" '
            f'stroke="#222222" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{_fmt_coord(py(ty) + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt_label(ty)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN["left"] + plot_w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{MARGIN["top"] + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {MARGIN["top"] + plot_h / 2:.1f})">{ylabel}</text>'
    )
    # series
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{_fmt_coord(px(x))},{_fmt_coord(py(y))}" for x, y in zip(s.xs, s.ys))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{points}"/>'
        )
        legend_y = MARGIN["top"] + 14 + 16 * i
        lx = MARGIN["left"] + plot_w - 150
        parts.append(
            f'<line x1="{lx}" y1="{legend_y - 4}" x2="{lx + 22}" y2="{legend_y - 4}" '
            f'stroke="{color}" stroke-width="1.8"/>'
        )
        parts.append(
            f'<text x="{lx + 28}" y="{legend_y}" font-family="sans-serif" font-size="12">{s.label}</text>'
        )
    for mx, my, label in markers:
        parts.append(
            f'<circle cx="{_fmt_coord(px(mx))}" cy="{_fmt_coord(py(my))}" r="4" '
            f'fill="none" stroke="#000000" stroke-width="1.2"/>'
        )
        parts.append(
            f'<text x="{_fmt_coord(px(mx) + 7)}" y="{_fmt_coord(py(my) - 7)}" '
            f'font-family="sans-serif" font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def frontier_crossing(policy):
    """ln s where the two frontiers meet, or None for parallel slopes."""
    if policy.b2 == policy.a2:
        return None
    return (policy.a1 - policy.b1) / (policy.b2 - policy.a2)


def frontier_series(policy, s_lo=50.0, s_hi=650.0, n=200):
    """Rent-vs-score series for the a- and b-frontiers plus crossing marker."""
    if not 0.0 < s_lo < s_hi:
        raise ValueError(f"score range must satisfy 0 < lo < hi, got ({s_lo}, {s_hi})")
    scores = np.exp(np.linspace(math.log(s_lo), math.log(s_hi), n))
    rent_a = policy.a1 + policy.a2 * np.log(scores)
    rent_b = policy.b1 + policy.b2 * np.log(scores)
    series = [
        Series("pre-change frontier", tuple(scores), tuple(rent_a)),
        Series("post-change frontier", tuple(scores), tuple(rent_b)),
    ]
    markers = []
    ln_cross = frontier_crossing(policy)
    if ln_cross is not None and math.log(s_lo) <= ln_cross <= math.log(s_hi):
        s_cross = math.exp(ln_cross)
        rent_cross = policy.a1 + policy.a2 * ln_cross
        markers.append((s_cross, rent_cross, f"cross at ln s = {ln_cross:.3f}"))
    return series, markers, ln_cross


def write_frontier_plot(out_svg, out_csv, policy, s_lo=50.0, s_hi=650.0, n=200):
    series, markers, ln_cross = frontier_series(policy, s_lo, s_hi, n)
    svg = line_chart_svg(
        series,
        title="Rent against school score before and after the frontier change",
        xlabel="school score",
        ylabel="weekly rent (GBP)",
        markers=markers,
    )
    with open(out_svg, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    rows = [
        [format_number(s), format_number(math.log(s)), format_number(ra), format_number(rb)]
        for s, ra, rb in zip(series[0].xs, series[0].ys, series[1].ys)
    ]
    _write_csv(out_csv, ["score", "ln_score", "rent_pre", "rent_post"], rows)
    return ln_cross


def cv_series(cv_rows):
    """Group long-form (tau, y0, cv, method, err) rows into one series per y0."""
    by_y0 = {}
    for tau, y0, cv, _method, _err in cv_rows:
        by_y0.setdefault(round(float(y0), 9), []).append((float(tau), float(cv)))
    series = []
    for y0 in sorted(by_y0):
        pts = sorted(by_y0[y0])
        series.append(Series(f"y0 = {y0:.6g}", tuple(p[0] for p in pts), tuple(p[1] for p in pts)))
    return series


def write_cv_plot(out_svg, out_csv, cv_rows):
    series = cv_series(cv_rows)
    svg = line_chart_svg(
        series,
        title="Compensating variation by preference quantile",
        xlabel="preference quantile tau",
        ylabel="CV (GBP/week)",
    )
    with open(out_svg, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    rows = [
        [format_number(tau), format_number(y0), format_number(cv)]
        for tau, y0, cv, _m, _e in cv_rows
    ]
    _write_csv(out_csv, ["tau", "y0", "cv_gbp"], rows)
