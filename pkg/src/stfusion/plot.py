"""Weighted-RMSE-versus-horizon line chart as a standalone SVG document."""

from __future__ import annotations

import math
from typing import Sequence

WIDTH, HEIGHT = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 30, 50


def _nice_ceiling(value: float) -> float:
    """Smallest of 1, 2, 2.5, 5 or 10 times a power of ten that is >= ``value``."""
    if value <= 0:
        return 1.0
    step = 10.0 ** math.floor(math.log10(value))
    return next(m * step for m in (1, 2, 2.5, 5, 10) if m * step >= value)


def rmse_series(rows: Sequence[tuple[str, str, str, float]], category: str = "weighted") -> list[tuple[float, float]]:
    """``(horizon seconds, value)`` pairs of one category's RMSE rows, in horizon order."""
    points = [(float(h), v) for metric, cat, h, v in rows if metric == "rmse" and cat == category]
    return sorted(points)


def render_svg(points: Sequence[tuple[float, float]], title: str = "Weighted RMSE") -> str:
    """Line chart of ``points``; identical input gives identical bytes."""
    if not points:
        raise ValueError("nothing to plot")
    xs = [p[0] for p in points]
    x_max = max(xs)
    y_max = _nice_ceiling(max(p[1] for p in points))
    plot_w = WIDTH - LEFT - RIGHT
    plot_h = HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + plot_w * x / x_max

    def sy(y):
        return TOP + plot_h * (1.0 - y / y_max)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
           f'<line x1="{LEFT}" y1="{sy(0):.2f}" x2="{LEFT + plot_w}" y2="{sy(0):.2f}" stroke="black"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{sy(0):.2f}" stroke="black"/>']
    for k in range(5):
        y = y_max * k / 4
        out.append(f'<line x1="{LEFT - 4}" y1="{sy(y):.2f}" x2="{LEFT}" y2="{sy(y):.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 7}" y="{sy(y) + 4:.2f}" text-anchor="end">{y:.2f}</text>')
    for x in xs:
        out.append(f'<line x1="{sx(x):.2f}" y1="{sy(0):.2f}" x2="{sx(x):.2f}" y2="{sy(0) + 4:.2f}" stroke="black"/>')
        out.append(f'<text x="{sx(x):.2f}" y="{sy(0) + 16:.2f}" text-anchor="middle">{x:.1f}</text>')
    out.append(f'<text x="{LEFT + plot_w / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">prediction horizon (s)</text>')
    out.append(f'<text x="14" y="{TOP + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {TOP + plot_h / 2:.1f})">RMSE (m)</text>')
    path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
    out.append(f'<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{path}"/>')
    for x, y in points:
        out.append(f'<circle class="point" cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="#1f5fa8">'
                   f'<title>{x:.1f} s: {y:.6f}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
