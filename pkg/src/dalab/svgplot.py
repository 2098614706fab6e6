"""Minimal SVG line chart: axes, ticks, one polyline per series, shaded mean +- std band."""

from __future__ import annotations

from typing import Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + k * step for k in range(n)]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_chart(x: Sequence[float], series: dict[str, tuple[Sequence[float], Sequence[float]]],
               title: str = "", xlabel: str = "", ylabel: str = "",
               hlines: dict[str, tuple[float, float]] | None = None,
               width: int = 560, height: int = 360) -> str:
    """``series`` maps a name to ``(means, stds)`` over ``x``; ``hlines`` adds flat reference lines."""
    hlines = hlines or {}
    left, right, top, bottom = 60, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [float(v) for v in x]
    lows = [m - s for means, stds in series.values() for m, s in zip(means, stds)]
    highs = [m + s for means, stds in series.values() for m, s in zip(means, stds)]
    lows += [m - s for m, s in hlines.values()]
    highs += [m + s for m, s in hlines.values()]
    y0, y1 = (min(lows), max(highs)) if lows else (0.0, 1.0)
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.05
    y0, y1 = y0 - pad, y1 + pad
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for v in xs:
        out.append(f'<line x1="{_fmt(px(v))}" y1="{top + ph}" x2="{_fmt(px(v))}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(v))}" y="{top + ph + 16}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{left - 4}" y1="{_fmt(py(v))}" x2="{left}" y2="{_fmt(py(v))}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{_fmt(py(v) + 4)}" text-anchor="end">{v:.3f}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2})">{_esc(ylabel)}</text>')

    legend_y = top + 10
    for k, (name, (means, stds)) in enumerate(series.items()):
        c = PALETTE[k % len(PALETTE)]
        upper = [f"{_fmt(px(a))},{_fmt(py(m + s))}" for a, m, s in zip(xs, means, stds)]
        lower = [f"{_fmt(px(a))},{_fmt(py(m - s))}" for a, m, s in reversed(list(zip(xs, means, stds)))]
        out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{c}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(m))}" for a, m in zip(xs, means))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
        for a, m in zip(xs, means):
            out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(m))}" r="3" fill="{c}"/>')
        out.append(f'<line x1="{left + pw + 10}" y1="{legend_y}" x2="{left + pw + 30}" y2="{legend_y}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{legend_y + 4}">{_esc(name)}</text>')
        legend_y += 16
    for k, (name, (m, _s)) in enumerate(hlines.items()):
        c = PALETTE[(len(series) + k) % len(PALETTE)]
        out.append(f'<line x1="{left}" y1="{_fmt(py(m))}" x2="{left + pw}" y2="{_fmt(py(m))}" stroke="{c}" '
                   f'stroke-dasharray="5,4"/>')
        out.append(f'<line x1="{left + pw + 10}" y1="{legend_y}" x2="{left + pw + 30}" y2="{legend_y}" '
                   f'stroke="{c}" stroke-dasharray="5,4"/>')
        out.append(f'<text x="{left + pw + 35}" y="{legend_y + 4}">{_esc(name)}</text>')
        legend_y += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"
