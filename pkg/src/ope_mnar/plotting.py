"""Dependency-free SVG chart of MSE, squared bias and variance against alpha."""
from __future__ import annotations

import math
from typing import List
from xml.sax.saxutils import escape

from .harness import SweepSummary

LOG_FLOOR = 1e-12
PANELS = (("mse", "MSE"), ("squared_bias", "squared bias"), ("variance", "variance"))
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

PANEL_W, PANEL_H = 300, 240
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 15, 30, 40
LEGEND_H = 30


def _log(v: float) -> float:
    return math.log10(max(v, LOG_FLOOR))


def render_svg(summary: SweepSummary) -> str:
    alphas = summary.alphas()
    names = summary.estimators()
    width = len(PANELS) * PANEL_W
    height = PANEL_H + LEGEND_H
    parts: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    a_lo, a_hi = alphas[0], alphas[-1]
    a_span = (a_hi - a_lo) or 1.0
    for p, (metric, title) in enumerate(PANELS):
        x0 = p * PANEL_W + MARGIN_L
        plot_w = PANEL_W - MARGIN_L - MARGIN_R
        plot_h = PANEL_H - MARGIN_T - MARGIN_B
        values = [_log(getattr(r, metric)) for r in summary.rows]
        lo, hi = math.floor(min(values)), math.ceil(max(values))
        if hi == lo:
            hi = lo + 1

        def sx(a: float) -> float:
            return x0 + (a - a_lo) / a_span * plot_w

        def sy(v: float) -> float:
            return MARGIN_T + (hi - _log(v)) / (hi - lo) * plot_h

        parts.append(f'<text x="{x0 + plot_w / 2}" y="18" text-anchor="middle">{title}</text>')
        parts.append(
            f'<rect x="{x0}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
            f'fill="none" stroke="black"/>'
        )
        for dec in range(lo, hi + 1):
            y = sy(10.0**dec)
            parts.append(f'<line x1="{x0}" x2="{x0 + plot_w}" y1="{y:.1f}" y2="{y:.1f}" stroke="#ddd"/>')
            parts.append(f'<text x="{x0 - 5}" y="{y + 4:.1f}" text-anchor="end">1e{dec}</text>')
        for a in alphas:
            parts.append(
                f'<text x="{sx(a):.1f}" y="{MARGIN_T + plot_h + 15}" text-anchor="middle">{a:g}</text>'
            )
        parts.append(
            f'<text x="{x0 + plot_w / 2}" y="{MARGIN_T + plot_h + 32}" text-anchor="middle">alpha</text>'
        )
        for i, name in enumerate(names):
            pts = " ".join(
                f"{sx(a):.1f},{sy(getattr(summary.row(a, name), metric)):.1f}" for a in alphas
            )
            color = COLORS[i % len(COLORS)]
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
    for i, name in enumerate(names):
        x = 20 + i * 180
        y = PANEL_H + 15
        color = COLORS[i % len(COLORS)]
        parts.append(f'<line x1="{x}" x2="{x + 20}" y1="{y}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x + 25}" y="{y + 4}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
