"""Minimal SVG output built from ``polyline`` and ``rect`` elements only.

Axes are ranged from the data; the ranges used are returned so reports can
record them.  No timestamps or random ids are written, so output bytes
depend only on the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

WIDTH = 640
HEIGHT = 400
_MARGIN = 50


@dataclass(frozen=True)
class Axes:
    x_range: tuple[float, float]
    y_range: tuple[float, float]

    def to_dict(self) -> dict:
        return {"x_range": list(self.x_range), "y_range": list(self.y_range)}

    def px(self, x):
        lo, hi = self.x_range
        return _MARGIN + (np.asarray(x, dtype=float) - lo) / (hi - lo) * (WIDTH - 2 * _MARGIN)

    def py(self, y):
        lo, hi = self.y_range
        return HEIGHT - _MARGIN - (np.asarray(y, dtype=float) - lo) / (hi - lo) * (HEIGHT - 2 * _MARGIN)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _range(lo: float, hi: float) -> tuple[float, float]:
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    return float(lo), float(hi)


def _frame(axes: Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    x0, x1 = _MARGIN, WIDTH - _MARGIN
    y0, y1 = HEIGHT - _MARGIN, _MARGIN
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>',
    ]
    # tick marks at the range ends, labelled in the description
    for x in (x0, x1):
        lines.append(f'<polyline points="{x},{y0} {x},{y0 + 5}" stroke="black"/>')
    for y in (y0, y1):
        lines.append(f'<polyline points="{x0 - 5},{y} {x0},{y}" stroke="black"/>')
    xr, yr = axes.x_range, axes.y_range
    lines.append(
        f"<desc>{escape(xlabel)} from {xr[0]:.6g} to {xr[1]:.6g}; "
        f"{escape(ylabel)} from {yr[0]:.6g} to {yr[1]:.6g}</desc>"
    )
    return lines


def histogram_overlay(series, title: str, xlabel: str, ylabel: str = "density") -> tuple[str, Axes]:
    """Step outlines for several histograms.

    ``series`` is a list of ``(label, edges, densities, colour)``.
    """
    lo = min(float(e[0]) for _, e, _, _ in series)
    hi = max(float(e[-1]) for _, e, _, _ in series)
    top = max(float(np.max(d)) for _, _, d, _ in series)
    axes = Axes(_range(lo, hi), _range(0.0, top * 1.05))
    lines = _frame(axes, title, xlabel, ylabel)
    for label, edges, dens, colour in series:
        edges = np.asarray(edges, dtype=float)
        dens = np.asarray(dens, dtype=float)
        xs = np.repeat(edges, 2)
        ys = np.concatenate([[0.0], np.repeat(dens, 2), [0.0]])
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(axes.px(xs), axes.py(ys)))
        lines.append(
            f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5">'
            f"<title>{escape(label)}</title></polyline>"
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n", axes


def density_overlay(layers, title: str, xlabel: str, ylabel: str) -> tuple[str, Axes]:
    """Shaded cells for several 2-D histograms.

    ``layers`` is a list of ``(label, edges1, edges2, densities, colour)``;
    cell opacity is proportional to density within each layer.
    """
    x_lo = min(float(l[1][0]) for l in layers)
    x_hi = max(float(l[1][-1]) for l in layers)
    y_lo = min(float(l[2][0]) for l in layers)
    y_hi = max(float(l[2][-1]) for l in layers)
    axes = Axes(_range(x_lo, x_hi), _range(y_lo, y_hi))
    lines = _frame(axes, title, xlabel, ylabel)
    for label, e1, e2, dens, colour in layers:
        dens = np.asarray(dens, dtype=float)
        peak = float(dens.max()) if dens.size else 0.0
        lines.append(f"<g><title>{escape(label)}</title>")
        if peak > 0:
            xs, ys = axes.px(e1), axes.py(e2)
            for i, j in zip(*np.nonzero(dens)):
                w = xs[i + 1] - xs[i]
                h = ys[j] - ys[j + 1]
                lines.append(
                    f'<rect x="{_fmt(xs[i])}" y="{_fmt(ys[j + 1])}" width="{_fmt(w)}" '
                    f'height="{_fmt(h)}" fill="{colour}" '
                    f'fill-opacity="{0.1 + 0.9 * dens[i, j] / peak:.3f}"/>'
                )
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n", axes
