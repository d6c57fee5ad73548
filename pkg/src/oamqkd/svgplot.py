"""Tiny native SVG charts.

Quick-look figures for the CLI: line charts for windowed error-rate
traces, bar charts for rate comparisons, heatmaps for detection
matrices and a pulse-train sketch for arrival-time walk-off.  The
CSV/JSON files are the canonical outputs; these are drawn with fixed
fonts and fixed formatting so identical inputs give identical bytes.

Every function returns one complete standalone <svg> document string.
"""

from __future__ import annotations

import math
from typing import Sequence

from .exceptions import DomainError

_FONT = "Helvetica, Arial, sans-serif"
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_BG = "#ffffff"
_FG = "#222222"
_GRID = "#d8d8d8"


def _f(x: float) -> str:
    """Fixed, locale-free coordinate formatting."""
    if x == int(x):
        return str(int(x))
    return f"{x:.2f}"


def _esc(s: str) -> str:
    return (
        str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


def _header(width: int, height: int) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="{_BG}"/>',
    ]


def _text(x: float, y: float, s: str, size: int = 12, anchor: str = "start",
          color: str = _FG) -> str:
    return (
        f'<text x="{_f(x)}" y="{_f(y)}" font-family="{_FONT}" '
        f'font-size="{size}" text-anchor="{anchor}" fill="{color}">'
        f"{_esc(s)}</text>"
    )


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _tick_label(v: float) -> str:
    a = abs(v)
    if a != 0 and (a < 1e-2 or a >= 1e4):
        return f"{v:.1e}"
    return f"{v:.3g}"


class _Frame:
    """Shared plot frame: margins, scales, axes, tick grid."""

    def __init__(self, width, height, x_lo, x_hi, y_lo, y_hi,
                 title="", x_label="", y_label=""):
        self.width, self.height = width, height
        self.left, self.right = 62, 18
        self.top = 34 if title else 16
        self.bottom = 46
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        if y_hi <= y_lo:
            y_hi = y_lo + 1.0
        self.x_lo, self.x_hi = x_lo, x_hi
        self.y_lo, self.y_hi = y_lo, y_hi
        self.title, self.x_label, self.y_label = title, x_label, y_label

    def x(self, v: float) -> float:
        span = self.width - self.left - self.right
        return self.left + (v - self.x_lo) / (self.x_hi - self.x_lo) * span

    def y(self, v: float) -> float:
        span = self.height - self.top - self.bottom
        return self.height - self.bottom - (v - self.y_lo) / (self.y_hi - self.y_lo) * span

    def render(self) -> list[str]:
        out = _header(self.width, self.height)
        if self.title:
            out.append(_text(self.width / 2, 20, self.title, 14, "middle"))
        for v in _ticks(self.y_lo, self.y_hi):
            yy = self.y(v)
            out.append(
                f'<line x1="{_f(self.left)}" y1="{_f(yy)}" '
                f'x2="{_f(self.width - self.right)}" y2="{_f(yy)}" '
                f'stroke="{_GRID}" stroke-width="1"/>'
            )
            out.append(_text(self.left - 6, yy + 4, _tick_label(v), 10, "end"))
        for v in _ticks(self.x_lo, self.x_hi):
            xx = self.x(v)
            out.append(
                f'<line x1="{_f(xx)}" y1="{_f(self.height - self.bottom)}" '
                f'x2="{_f(xx)}" y2="{_f(self.height - self.bottom + 4)}" '
                f'stroke="{_FG}" stroke-width="1"/>'
            )
            out.append(
                _text(xx, self.height - self.bottom + 16, _tick_label(v), 10, "middle")
            )
        out.append(
            f'<rect x="{_f(self.left)}" y="{_f(self.top)}" '
            f'width="{_f(self.width - self.left - self.right)}" '
            f'height="{_f(self.height - self.top - self.bottom)}" '
            f'fill="none" stroke="{_FG}" stroke-width="1"/>'
        )
        if self.x_label:
            out.append(
                _text(self.width / 2, self.height - 10, self.x_label, 11, "middle")
            )
        if self.y_label:
            out.append(
                f'<text x="14" y="{_f(self.height / 2)}" font-family="{_FONT}" '
                f'font-size="11" text-anchor="middle" fill="{_FG}" '
                f'transform="rotate(-90 14 {_f(self.height / 2)})">'
                f"{_esc(self.y_label)}</text>"
            )
        return out


def line_chart(series: Sequence[tuple[str, Sequence[tuple[float, float]]]],
               title: str = "", x_label: str = "", y_label: str = "",
               width: int = 640, height: int = 400,
               y_min: float | None = None, y_max: float | None = None) -> str:
    """Multi-series line chart.

    series: (label, [(x, y), ...]) pairs.  Points with NaN y break the
    line rather than being drawn.
    """
    if not series:
        raise DomainError("line_chart needs at least one series")
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts if not math.isnan(y)]
    if not xs:
        raise DomainError("line_chart needs at least one point")
    x_lo, x_hi = min(xs), max(xs)
    y_lo = min(ys) if ys else 0.0
    y_hi = max(ys) if ys else 1.0
    pad = 0.08 * (y_hi - y_lo or 1.0)
    y_lo = y_min if y_min is not None else y_lo - pad
    y_hi = y_max if y_max is not None else y_hi + pad
    frame = _Frame(width, height, x_lo, x_hi, y_lo, y_hi, title, x_label, y_label)
    out = frame.render()
    for i, (label, pts) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        run: list[str] = []
        segments: list[list[str]] = []
        for x, y in pts:
            if math.isnan(y):
                if run:
                    segments.append(run)
                    run = []
                continue
            run.append(f"{_f(frame.x(x))},{_f(frame.y(y))}")
        if run:
            segments.append(run)
        for seg in segments:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                out.append(
                    f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>'
                )
            else:
                out.append(
                    f'<polyline points="{" ".join(seg)}" fill="none" '
                    f'stroke="{color}" stroke-width="1.8"/>'
                )
        lx = width - frame.right - 110
        ly = frame.top + 16 + 16 * i
        out.append(
            f'<line x1="{_f(lx)}" y1="{_f(ly - 4)}" x2="{_f(lx + 22)}" '
            f'y2="{_f(ly - 4)}" stroke="{color}" stroke-width="2"/>'
        )
        out.append(_text(lx + 28, ly, label, 11))
    out.append("</svg>")
    return "\n".join(out)


def bar_chart(labels: Sequence[str], values: Sequence[float],
              title: str = "", y_label: str = "",
              width: int = 480, height: int = 360) -> str:
    """Labeled vertical bars with the value printed above each bar."""
    if not labels or len(labels) != len(values):
        raise DomainError("bar_chart needs matching labels and values")
    y_hi = max([v for v in values if not math.isnan(v)] + [0.0]) * 1.15 or 1.0
    frame = _Frame(width, height, 0.0, float(len(labels)), 0.0, y_hi,
                   title, "", y_label)
    out = frame.render()
    slot = (width - frame.left - frame.right) / len(labels)
    for i, (label, v) in enumerate(zip(labels, values)):
        color = _PALETTE[i % len(_PALETTE)]
        x0 = frame.left + slot * (i + 0.18)
        w = slot * 0.64
        if not math.isnan(v):
            y0 = frame.y(v)
            out.append(
                f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(w)}" '
                f'height="{_f(frame.y(0.0) - y0)}" fill="{color}"/>'
            )
            out.append(_text(x0 + w / 2, y0 - 5, _tick_label(v), 10, "middle"))
        out.append(
            _text(x0 + w / 2, height - frame.bottom + 16, label, 11, "middle")
        )
    out.append("</svg>")
    return "\n".join(out)


def _cell_color(v: float) -> str:
    """White -> blue ramp over [0, 1]."""
    v = min(max(v, 0.0), 1.0)
    r = round(255 - 224 * v)
    g = round(255 - 136 * v)
    b = round(255 - 75 * v)
    return f"rgb({r},{g},{b})"


def heatmap(matrix: Sequence[Sequence[float]], row_labels: Sequence[str],
            col_labels: Sequence[str], title: str = "",
            cell: int = 54) -> str:
    """Annotated matrix heatmap; values expected in [0, 1]."""
    n_rows = len(matrix)
    if n_rows == 0 or len(row_labels) != n_rows:
        raise DomainError("heatmap needs one label per row")
    n_cols = len(matrix[0])
    if any(len(row) != n_cols for row in matrix) or len(col_labels) != n_cols:
        raise DomainError("heatmap needs a rectangular matrix with column labels")
    left, top = 86, 58 if title else 40
    width = left + cell * n_cols + 16
    height = top + cell * n_rows + 16
    out = _header(width, height)
    if title:
        out.append(_text(width / 2, 22, title, 14, "middle"))
    for j, label in enumerate(col_labels):
        out.append(_text(left + cell * (j + 0.5), top - 8, label, 11, "middle"))
    for i, label in enumerate(row_labels):
        out.append(_text(left - 8, top + cell * (i + 0.5) + 4, label, 11, "end"))
    for i, row in enumerate(matrix):
        for j, v in enumerate(row):
            x0, y0 = left + cell * j, top + cell * i
            out.append(
                f'<rect x="{x0}" y="{y0}" width="{cell}" height="{cell}" '
                f'fill="{_cell_color(float(v))}" stroke="{_GRID}"/>'
            )
            dark = float(v) > 0.55
            out.append(
                _text(x0 + cell / 2, y0 + cell / 2 + 4, f"{float(v):.3f}", 10,
                      "middle", "#ffffff" if dark else _FG)
            )
    out.append("</svg>")
    return "\n".join(out)


def pulse_train(offsets_ns: Sequence[tuple[str, float]], window_ns: float,
                title: str = "", width: int = 560) -> str:
    """One pulse per row on a shared time axis, centered at its offset."""
    if not offsets_ns:
        raise DomainError("pulse_train needs at least one pulse")
    if window_ns <= 0:
        raise DomainError("window must be positive")
    row_h = 64
    top = 40 if title else 18
    left, right = 78, 20
    height = top + row_h * len(offsets_ns) + 40
    out = _header(width, height)
    if title:
        out.append(_text(width / 2, 22, title, 14, "middle"))
    span = width - left - right

    def tx(t: float) -> float:
        return left + t / window_ns * span

    sigma = window_ns / 28.0
    for i, (label, t0) in enumerate(offsets_ns):
        base = top + row_h * (i + 1) - 14
        color = _PALETTE[i % len(_PALETTE)]
        out.append(_text(left - 8, base - row_h * 0.3, label, 11, "end"))
        pts = []
        n_pts = 120
        for k in range(n_pts + 1):
            t = window_ns * k / n_pts
            amp = math.exp(-0.5 * ((t - t0) / sigma) ** 2)
            pts.append(f"{_f(tx(t))},{_f(base - amp * (row_h - 22))}")
        out.append(
            f'<polyline points="{" ".join(pts)}" fill="none" '
            f'stroke="{color}" stroke-width="1.8"/>'
        )
        out.append(
            f'<line x1="{_f(left)}" y1="{_f(base)}" x2="{_f(width - right)}" '
            f'y2="{_f(base)}" stroke="{_FG}" stroke-width="1"/>'
        )
    axis_y = top + row_h * len(offsets_ns) + 6
    for v in _ticks(0.0, window_ns):
        out.append(_text(tx(v), axis_y + 12, _tick_label(v), 10, "middle"))
    out.append(_text(width / 2, axis_y + 28, "time (ns)", 11, "middle"))
    out.append("</svg>")
    return "\n".join(out)
