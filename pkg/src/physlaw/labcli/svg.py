"""Tiny self-contained SVG charts (bar, line, heatmap)."""
from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

W, H = 480, 320
MARGIN = dict(left=60, right=20, top=36, bottom=56)
COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _frame(title: str, body: list[str], ylabel: str = "", xlabel: str = "") -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    if ylabel:
        parts.append(f'<text x="14" y="{H / 2}" text-anchor="middle" transform="rotate(-90 14 {H / 2})">'
                     f'{escape(ylabel)}</text>')
    if xlabel:
        parts.append(f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.extend(body)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _plot_box():
    x0, y0 = MARGIN["left"], MARGIN["top"]
    return x0, y0, W - MARGIN["right"] - x0, H - MARGIN["bottom"] - y0


def _nice_max(v: float) -> float:
    if not math.isfinite(v) or v <= 0:
        return 1.0
    mag = 10 ** math.floor(math.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= v:
            return m * mag
    return 10 * mag


def _y_axis(ymax: float, x0, y0, pw, ph) -> list[str]:
    out = [f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y0 + ph}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0 + ph}" x2="{x0 + pw}" y2="{y0 + ph}" stroke="black"/>']
    for k in range(5):
        v = ymax * k / 4
        y = y0 + ph - ph * k / 4
        out.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    return out


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str, ylabel: str = "") -> str:
    x0, y0, pw, ph = _plot_box()
    finite = [v for v in values if math.isfinite(v)]
    ymax = _nice_max(max(finite) if finite else 1.0)
    body = _y_axis(ymax, x0, y0, pw, ph)
    n = max(len(values), 1)
    slot = pw / n
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = x0 + i * slot + slot * 0.15
        bw = slot * 0.7
        hgt = 0.0 if not math.isfinite(v) else ph * v / ymax
        body.append(f'<rect x="{x:.1f}" y="{y0 + ph - hgt:.1f}" width="{bw:.1f}" height="{hgt:.1f}" '
                    f'fill="{COLORS[i % len(COLORS)]}"><title>{escape(lab)}: {v:.4g}</title></rect>')
        body.append(f'<text x="{x + bw / 2:.1f}" y="{y0 + ph + 14}" text-anchor="middle">{escape(lab)}</text>')
    return _frame(title, body, ylabel)


def line_chart(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str,
               xlabel: str = "", ylabel: str = "") -> str:
    x0, y0, pw, ph = _plot_box()
    xs = [x for xv, _ in series.values() for x in xv]
    ys = [y for _, yv in series.values() for y in yv if math.isfinite(y)]
    xmin, xmax = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if xmax == xmin:
        xmax = xmin + 1.0
    ymax = _nice_max(max(ys) if ys else 1.0)
    body = _y_axis(ymax, x0, y0, pw, ph)
    for k in range(5):
        xv = xmin + (xmax - xmin) * k / 4
        body.append(f'<text x="{x0 + pw * k / 4:.1f}" y="{y0 + ph + 14}" text-anchor="middle">{xv:.3g}</text>')
    for i, (name, (xv, yv)) in enumerate(series.items()):
        col = COLORS[i % len(COLORS)]
        pts = [(x0 + pw * (x - xmin) / (xmax - xmin), y0 + ph - ph * y / ymax)
               for x, y in zip(xv, yv) if math.isfinite(y)]
        if pts:
            body.append(f'<polyline fill="none" stroke="{col}" stroke-width="2" points="'
                        + " ".join(f"{a:.1f},{b:.1f}" for a, b in pts) + '"/>')
        body.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{col}"/>' for a, b in pts)
        body.append(f'<text x="{x0 + pw - 4}" y="{y0 + 14 + 14 * i}" text-anchor="end" fill="{col}">'
                    f'{escape(name)}</text>')
    return _frame(title, body, ylabel, xlabel)


def heatmap(xs: Sequence[float], ys: Sequence[float], grid: Sequence[Sequence[float]], title: str,
            xlabel: str = "", ylabel: str = "") -> str:
    """``grid[j][i]`` is the value at (xs[i], ys[j]); NaN cells stay blank."""
    x0, y0, pw, ph = _plot_box()
    vals = [v for row in grid for v in row if math.isfinite(v)]
    vmax = max(vals) if vals else 1.0
    cw, ch = pw / max(len(xs), 1), ph / max(len(ys), 1)
    body = []
    for j, row in enumerate(grid):
        for i, v in enumerate(row):
            if not math.isfinite(v):
                continue
            s = 0 if vmax <= 0 else v / vmax
            shade = int(255 * (1 - s))
            body.append(f'<rect x="{x0 + i * cw:.1f}" y="{y0 + ph - (j + 1) * ch:.1f}" width="{cw:.1f}" '
                        f'height="{ch:.1f}" fill="rgb(255,{shade},{shade})"><title>{v:.4g}</title></rect>')
    for i, x in enumerate(xs):
        body.append(f'<text x="{x0 + (i + 0.5) * cw:.1f}" y="{y0 + ph + 14}" text-anchor="middle">{x:.3g}</text>')
    for j, y in enumerate(ys):
        body.append(f'<text x="{x0 - 6}" y="{y0 + ph - (j + 0.5) * ch + 4:.1f}" text-anchor="end">{y:.3g}</text>')
    return _frame(title, body, ylabel, xlabel)
