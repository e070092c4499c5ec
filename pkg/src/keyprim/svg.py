"""Minimal SVG line plots of 2D trajectories (3D input is drawn in x-y)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class Series:
    label: str
    points: np.ndarray
    color: str = "#1f77b4"
    width: float = 2.0
    opacity: float = 1.0
    markers: bool = True


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render(series: Sequence[Series], title: str = "", size: int = 480, margin: int = 30) -> str:
    """SVG document with one polyline per series.

    Series with ``markers`` get a "+" at the first point and a "*" at the last.
    """
    if not series:
        raise ValueError("nothing to plot")
    pts = np.vstack([np.asarray(s.points, dtype=float)[:, :2] for s in series])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    scale = (size - 2 * margin) / span

    def xy(p):
        return margin + (p[0] - lo[0]) * scale, size - margin - (p[1] - lo[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20 * len(series)}" '
        f'viewBox="0 0 {size} {size + 20 * len(series)}">',
        f'<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{margin}" y="18" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    for s in series:
        p = np.asarray(s.points, dtype=float)[:, :2]
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(xy, p))
        out.append(f'<polyline fill="none" stroke="{s.color}" stroke-width="{s.width}" '
                   f'stroke-opacity="{s.opacity}" points="{coords}"/>')
        if s.markers:
            for glyph, q in (("+", p[0]), ("*", p[-1])):
                x, y = xy(q)
                out.append(f'<text x="{_fmt(x)}" y="{_fmt(y + 6)}" text-anchor="middle" font-family="monospace" '
                           f'font-size="18" fill="{s.color}">{glyph}</text>')
    legend = [s for s in series if s.label]
    for i, s in enumerate(legend):
        y = size + 14 + 20 * i
        out.append(f'<line x1="{margin}" y1="{y - 4}" x2="{margin + 24}" y2="{y - 4}" stroke="{s.color}" '
                   f'stroke-width="3"/>')
        out.append(f'<text x="{margin + 30}" y="{y}" font-family="sans-serif" font-size="12">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
