"""Standalone SVG line plots of trajectory logs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .trajectory import TrajectoryLog

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class PlotSpec:
    x: str
    y: Sequence[str]
    logx: bool = False
    logy: bool = False
    title: str = ""
    labels: Optional[Sequence[str]] = None


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def _transform(v: np.ndarray, log: bool) -> np.ndarray:
    if not log:
        return v
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v > 0, np.log10(np.where(v > 0, v, 1.0)), np.nan)


def _range(vals: np.ndarray) -> tuple[float, float]:
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-300:
        pad = max(abs(lo), 1.0) * 0.5
        return lo - pad, hi + pad
    return lo, hi


def render_svg(log: TrajectoryLog, layout: PlotSpec) -> str:
    if len(log) == 0:
        raise ValueError("cannot plot an empty log")
    for c in [layout.x, *layout.y]:
        if c not in log:
            raise KeyError(f"missing column {c!r}")
    labels = list(layout.labels) if layout.labels else list(layout.y)
    xs = _transform(log[layout.x], layout.logx)
    ys = [_transform(log[c], layout.logy) for c in layout.y]
    x0, x1 = _range(xs)
    y0, y1 = _range(np.concatenate(ys))
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def px(v):
        return MARGIN_L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN_T + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if layout.title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle">{escape(layout.title)}</text>')
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        tx = 10**fx if layout.logx else fx
        ty = 10**fy if layout.logy else fy
        out.append(f'<text x="{px(fx):.1f}" y="{HEIGHT - MARGIN_B + 16}" text-anchor="middle">{_fmt(tx)}</text>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{_fmt(ty)}</text>')
    xlab = layout.x + (" (log)" if layout.logx else "")
    ylab = ", ".join(labels) + (" (log)" if layout.logy else "")
    out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlab)}</text>')
    out.append(
        f'<text x="16" y="{MARGIN_T + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_T + ph / 2:.1f})">{escape(ylab)}</text>'
    )
    for k, yv in enumerate(ys):
        keep = np.isfinite(xs) & np.isfinite(yv)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs[keep], yv[keep]))
        color = COLORS[k % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    if len(ys) > 1:
        for k, lab in enumerate(labels):
            ly = MARGIN_T + 14 + 16 * k
            lx = MARGIN_L + pw - 150
            color = COLORS[k % len(COLORS)]
            out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{lx + 26}" y="{ly}">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(log: TrajectoryLog, layout: PlotSpec, path) -> Path:
    """Write an SVG line plot of ``layout.y`` against ``layout.x``."""
    svg = render_svg(log, layout)
    p = Path(path)
    p.write_text(svg)
    return p
