"""Deterministic CSV tables and hand-rolled SVG plots.

SVG output is written with fixed float formatting and no library
metadata, so identical inputs produce identical bytes.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["write_csv", "heatmap_svg", "loglog_svg"]


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, complex):
        return f"{v.real:.12g}{v.imag:+.12g}j"
    return str(v)


def _color(t: float) -> str:
    """Simple blue-white-red ramp on [0, 1]."""
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        u = t / 0.5
        r, g, b = int(255 * u), int(255 * u), 255
    else:
        u = (t - 0.5) / 0.5
        r, g, b = 255, int(255 * (1 - u)), int(255 * (1 - u))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(path: str, values: np.ndarray, title: str = "") -> None:
    """Magnitude heatmap of a 2D array (NaN cells skipped)."""
    vals = np.abs(np.asarray(values, dtype=complex))
    finite = np.isfinite(vals)
    if not finite.any():
        raise ValueError("no finite values to plot")
    vmax = float(np.percentile(vals[finite], 98.0)) or 1.0
    ny, nx = vals.shape
    cell = max(1, 512 // max(nx, ny))
    w, h = nx * cell, ny * cell + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<text x="4" y="14" font-size="12" font-family="monospace">{title}</text>',
    ]
    for j in range(ny):
        for i in range(nx):
            if not finite[j, i]:
                continue
            c = _color(vals[j, i] / vmax)
            y = 20 + (ny - 1 - j) * cell
            parts.append(
                f'<rect x="{i * cell}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{c}"/>'
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def loglog_svg(path: str, xs: list[float], series: dict[str, list[float]],
               title: str = "") -> None:
    """Log-log polyline plot of one or more positive series."""
    w, h, pad = 480, 360, 40
    lx = [math.log10(x) for x in xs]
    all_y = [math.log10(max(v, 1e-300)) for ys in series.values() for v in ys]
    x0, x1 = min(lx), max(lx)
    y0, y1 = min(all_y), max(all_y)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(v):
        return pad + (math.log10(v) - x0) / (x1 - x0) * (w - 2 * pad)

    def sy(v):
        return h - pad - (math.log10(max(v, 1e-300)) - y0) / (y1 - y0) * (h - 2 * pad)

    colors = ["#1f4e9c", "#c23b22", "#2e8b57", "#8b5a2b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<text x="8" y="16" font-size="12" font-family="monospace">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{w - 2 * pad}" height="{h - 2 * pad}" '
        f'fill="none" stroke="#999"/>',
    ]
    for k, (name, ys) in enumerate(sorted(series.items())):
        col = colors[k % len(colors)]
        pth = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pth}" fill="none" stroke="{col}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{pad + 4}" y="{pad + 14 + 14 * k}" font-size="11" '
                     f'font-family="monospace" fill="{col}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
