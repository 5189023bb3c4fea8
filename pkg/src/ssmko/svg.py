"""Minimal deterministic SVG charts (line chart, heatmap, scatter)."""
from __future__ import annotations

import math
from html import escape
from typing import Mapping, Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 150, "top": 40, "bottom": 55}


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 10))
        t += step
    return out


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{(MARGIN["left"] + WIDTH - MARGIN["right"]) / 2:.1f}" y="{HEIGHT - 12}" '
        f'text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{(MARGIN["top"] + HEIGHT - MARGIN["bottom"]) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(MARGIN["top"] + HEIGHT - MARGIN["bottom"]) / 2:.1f})">{escape(ylabel)}</text>',
    ]


class _Axes:
    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi == xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        if yhi == ylo:
            ylo, yhi = ylo - 1.0, yhi + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def px(self, x):
        return self.x0 + (x - self.xlo) / (self.xhi - self.xlo) * (self.x1 - self.x0)

    def py(self, y):
        return self.y0 + (y - self.ylo) / (self.yhi - self.ylo) * (self.y1 - self.y0)

    def draw(self) -> list[str]:
        out = [
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>',
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>',
        ]
        for t in _ticks(self.xlo, self.xhi):
            x = self.px(t)
            out.append(f'<line x1="{_f(x)}" y1="{self.y0}" x2="{_f(x)}" y2="{self.y0 + 5}" stroke="black"/>')
            out.append(f'<text x="{_f(x)}" y="{self.y0 + 18}" text-anchor="middle">{t:g}</text>')
        for t in _ticks(self.ylo, self.yhi):
            y = self.py(t)
            out.append(f'<line x1="{self.x0 - 5}" y1="{_f(y)}" x2="{self.x0}" y2="{_f(y)}" stroke="black"/>')
            out.append(f'<text x="{self.x0 - 8}" y="{_f(y + 4)}" text-anchor="end">{t:g}</text>')
        return out


def line_chart(
    series: Mapping[str, Sequence[tuple[float, float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    zero_line: bool = True,
) -> str:
    """One polyline per series; NaN points are dropped."""
    pts = {k: [(x, y) for x, y in v if not math.isnan(y)] for k, v in series.items()}
    xs = [x for v in pts.values() for x, _ in v] or [0.0]
    ys = [y for v in pts.values() for _, y in v] or [0.0]
    lo, hi = min(ys + [0.0]), max(ys + [0.0])
    pad = 0.05 * (hi - lo or 1.0)
    ax = _Axes(min(xs), max(xs), lo - pad, hi + pad)
    out = _frame(title, xlabel, ylabel) + ax.draw()
    if zero_line:
        y = ax.py(0.0)
        out.append(f'<line x1="{ax.x0}" y1="{_f(y)}" x2="{ax.x1}" y2="{_f(y)}" stroke="#999" stroke-dasharray="4 3"/>')
    for i, (name, v) in enumerate(pts.items()):
        color = PALETTE[i % len(PALETTE)]
        if v:
            path = " ".join(f"{_f(ax.px(x))},{_f(ax.py(y))}" for x, y in v)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
            for x, y in v:
                out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 10 + 18 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _diverging(v: float, vmax: float) -> str:
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    if t < 0:
        r, g, b = 255 * (1 + t), 255 * (1 + t), 255
    else:
        r, g, b = 255, 255 * (1 - t), 255 * (1 - t)
    return f"#{int(round(r)):02x}{int(round(g)):02x}{int(round(b)):02x}"


def heatmap(
    values: Sequence[Sequence[float]],
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """Diverging heatmap (blue negative, red positive), symmetric color scale."""
    rows, cols = len(values), len(values[0]) if values else 0
    vmax = max((abs(v) for row in values for v in row if not math.isnan(v)), default=0.0)
    x0, y0 = 160, MARGIN["top"]
    cw = max(12.0, min(60.0, (WIDTH - x0 - 90) / max(cols, 1)))
    ch = max(10.0, min(30.0, (HEIGHT - y0 - MARGIN["bottom"]) / max(rows, 1)))
    width = int(x0 + cw * cols + 90)
    height = int(y0 + ch * rows + MARGIN["bottom"])
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i, row in enumerate(values):
        y = y0 + i * ch
        out.append(f'<text x="{x0 - 6}" y="{_f(y + ch / 2 + 4)}" text-anchor="end">{escape(str(row_labels[i]))}</text>')
        for j, v in enumerate(row):
            fill = "#cccccc" if math.isnan(v) else _diverging(v, vmax)
            out.append(
                f'<rect x="{_f(x0 + j * cw)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" fill="{fill}">'
                f"<title>{escape(str(row_labels[i]))} / {escape(str(col_labels[j]))}: {v:.3f}</title></rect>"
            )
    for j, lab in enumerate(col_labels):
        out.append(f'<text x="{_f(x0 + (j + 0.5) * cw)}" y="{_f(y0 + rows * ch + 15)}" text-anchor="middle">{escape(str(lab))}</text>')
    out.append(f'<text x="{_f(x0 + cols * cw / 2)}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{_f(y0 + rows * ch / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 14 {_f(y0 + rows * ch / 2)})">{escape(ylabel)}</text>')
    lx = x0 + cols * cw + 20
    out.append(f'<text x="{_f(lx)}" y="{y0 + 10}">max |change|</text>')
    out.append(f'<text x="{_f(lx)}" y="{y0 + 26}">{vmax:.2f}%</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter(points: Sequence[tuple[float, float]], title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Scatter on the unit square with a dashed ``y = x`` reference line."""
    ax = _Axes(0.0, 1.0, 0.0, 1.0)
    out = _frame(title, xlabel, ylabel) + ax.draw()
    out.append(
        f'<line class="reference" x1="{_f(ax.px(0))}" y1="{_f(ax.py(0))}" x2="{_f(ax.px(1))}" y2="{_f(ax.py(1))}" '
        'stroke="#999" stroke-dasharray="4 3"/>'
    )
    for x, y in points:
        out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="2.5" fill="{PALETTE[0]}" fill-opacity="0.6"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
