"""Minimal static SVG line charts with a log-scaled y axis."""
from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 30, 50


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart(series: Sequence[tuple[str, np.ndarray, np.ndarray]], *, title: str,
               xlabel: str, ylabel: str, floor: float = 1e-300) -> str:
    """Render ``(label, x, y)`` series; nonpositive or non-finite y values are skipped."""
    pts = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & (y > floor)
        pts.append((label, x[ok], np.log10(y[ok])))
    xs = np.concatenate([p[1] for p in pts]) if pts else np.empty(0)
    ys = np.concatenate([p[2] for p in pts]) if pts else np.empty(0)
    if xs.size == 0:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    else:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = math.floor(float(ys.min())), math.ceil(float(ys.max()))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return TOP + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    step = max(1, int(math.ceil((y1 - y0) / 8)))
    for e in range(int(y0), int(y1) + 1, step):
        yy = sy(e)
        out.append(f'<line x1="{LEFT}" y1="{yy:.1f}" x2="{LEFT + pw}" y2="{yy:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{yy + 4:.1f}" text-anchor="end">1e{e}</text>')
    for t in np.linspace(x0, x1, 5):
        xx = sx(t)
        out.append(f'<text x="{xx:.1f}" y="{TOP + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.1f})">{escape(ylabel)}</text>')
    for n, (label, x, y) in enumerate(pts):
        color = PALETTE[n % len(PALETTE)]
        if x.size:
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = TOP + 14 + 16 * n
        out.append(f'<line x1="{LEFT + pw + 10}" y1="{ly - 4}" x2="{LEFT + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 34}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
