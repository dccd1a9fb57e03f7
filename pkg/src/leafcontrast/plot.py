"""Dependency-free SVG line plot of a noise sweep: mAP against noise
magnitude, one line per method, one panel per noise kind."""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

from .errors import InputError
from .evaluation import SweepRow, read_sweep, summarize_sweep

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
PANEL_W, PANEL_H = 360, 260
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 55, 15, 35, 45


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(rows: Sequence[SweepRow]) -> str:
    if not rows:
        raise InputError("cannot plot an empty sweep table")
    summary = summarize_sweep(rows)
    kinds = sorted({s["noise_kind"] for s in summary})
    methods = sorted({s["method"] for s in summary})
    mags = sorted({s["magnitude"] for s in summary})
    lo, hi = mags[0], mags[-1]
    span = hi - lo if hi > lo else 1.0
    plot_w = PANEL_W - MARGIN_L - MARGIN_R
    plot_h = PANEL_H - MARGIN_T - MARGIN_B
    legend_h = 20 * len(methods) + 10
    width = PANEL_W * len(kinds)
    height = PANEL_H + legend_h
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for p, kind in enumerate(kinds):
        ox = p * PANEL_W + MARGIN_L
        oy = MARGIN_T

        def sx(m):
            x = (m - lo) / span if hi > lo else 0.5
            return ox + x * plot_w

        def sy(v):
            return oy + (1.0 - v) * plot_h

        out.append(f'<text x="{_f(ox + plot_w / 2)}" y="20" text-anchor="middle" '
                   f'font-size="13">{escape(kind)}</text>')
        out.append(f'<rect x="{ox}" y="{oy}" width="{plot_w}" height="{plot_h}" '
                   f'fill="none" stroke="#444"/>')
        for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
            y = sy(tick)
            out.append(f'<line x1="{ox}" y1="{_f(y)}" x2="{ox + plot_w}" y2="{_f(y)}" stroke="#ddd"/>')
            out.append(f'<text x="{ox - 6}" y="{_f(y + 4)}" text-anchor="end">{int(tick * 100)}</text>')
        for m in mags:
            x = sx(m)
            out.append(f'<text x="{_f(x)}" y="{oy + plot_h + 16}" text-anchor="middle">{m:g}</text>')
        out.append(f'<text x="{_f(ox + plot_w / 2)}" y="{oy + plot_h + 34}" '
                   f'text-anchor="middle">noise magnitude</text>')
        out.append(f'<text x="{ox - 40}" y="{_f(oy + plot_h / 2)}" text-anchor="middle" '
                   f'transform="rotate(-90 {ox - 40} {_f(oy + plot_h / 2)})">mAP [%]</text>')
        for mi, method in enumerate(methods):
            color = PALETTE[mi % len(PALETTE)]
            pts = [(sx(s["magnitude"]), sy(s["map_mean"])) for s in summary
                   if s["noise_kind"] == kind and s["method"] == method]
            if len(pts) > 1:
                path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
            for x, y in pts:
                out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="3" fill="{color}"/>')
    for mi, method in enumerate(methods):
        color = PALETTE[mi % len(PALETTE)]
        y = PANEL_H + 10 + 20 * mi
        out.append(f'<line x1="{MARGIN_L}" y1="{y}" x2="{MARGIN_L + 24}" y2="{y}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{MARGIN_L + 30}" y="{y + 4}">{escape(method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(table, path) -> None:
    """Render ``table`` (sweep rows or a sweep CSV path) to an SVG file."""
    rows = read_sweep(table) if not isinstance(table, (list, tuple)) else table
    svg = render_svg(rows)
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
