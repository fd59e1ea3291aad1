"""Tiny SVG emitters for loss curves and pattern diagrams."""

from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
W, H, PAD = 640, 400, 50


def _frame(title: str, width: int = W, height: int = H) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def _axes(x0, y0, x1, y1, xlab, ylab) -> list[str]:
    return [
        f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" fill="none" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="{y1 + 32}" text-anchor="middle">{escape(xlab)}</text>',
        f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{escape(ylab)}</text>',
    ]


def loss_curves(curves: Mapping[str, Sequence[float]], title: str = "training loss", logy: bool = True) -> str:
    x0, y0, x1, y1 = PAD + 10, PAD, W - 150, H - PAD
    ys = [v for c in curves.values() for v in c if math.isfinite(v) and (v > 0 or not logy)]
    out = _frame(title) + _axes(x0, y0, x1, y1, "epoch", "log10 loss" if logy else "loss")
    if not ys:
        return "\n".join(out + ["</svg>"]) + "\n"
    tr = (lambda v: math.log10(v)) if logy else (lambda v: v)
    lo, hi = tr(min(ys)), tr(max(ys))
    if hi - lo < 1e-12:
        lo, hi = lo - 1, hi + 1
    n_max = max(len(c) for c in curves.values())
    for k, (label, curve) in enumerate(curves.items()):
        pts = []
        step = max(1, len(curve) // 400)
        for i in range(0, len(curve), step):
            v = curve[i]
            if not math.isfinite(v) or (logy and v <= 0):
                continue
            px = x0 + (x1 - x0) * i / max(1, n_max - 1)
            py = y1 - (y1 - y0) * (tr(v) - lo) / (hi - lo)
            pts.append(f"{px:.1f},{py:.1f}")
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{x1 + 10}" y="{y0 + 16 * (k + 1)}" fill="{color}">{escape(label)}</text>')
    out.append(f'<text x="{x0 - 4}" y="{y0 + 4}" text-anchor="end">{hi:.2f}</text>')
    out.append(f'<text x="{x0 - 4}" y="{y1}" text-anchor="end">{lo:.2f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def pattern_diagram(rows: Sequence[tuple[float, int, float, float]], n_layers: int,
                    x_range: tuple[float, float], title: str = "activation patterns") -> str:
    """One panel per IAT layer: input on the x-axis, pattern space [-1, 1] on the y-axis."""
    height = 80 + 220 * n_layers
    out = _frame(title, W, height)
    xs = sorted({r[0] for r in rows})
    dx = (xs[1] - xs[0]) if len(xs) > 1 else (x_range[1] - x_range[0])
    span = x_range[1] - x_range[0] or 1.0
    for k in range(n_layers):
        x0, x1 = PAD + 10, W - PAD
        y0 = 40 + 220 * k
        y1 = y0 + 180
        out += _axes(x0, y0, x1, y1, "input" if k == n_layers - 1 else "", f"layer {k + 1}: s")
        bar = max(1.0, (x1 - x0) * dx / span)
        for x, layer, lo, hi in rows:
            if layer != k:
                continue
            px = x0 + (x1 - x0) * (x - x_range[0]) / span
            ya = y1 - (y1 - y0) * (hi + 1) / 2
            yb = y1 - (y1 - y0) * (lo + 1) / 2
            out.append(f'<rect x="{px - bar / 2:.2f}" y="{ya:.2f}" width="{bar:.2f}" '
                       f'height="{max(yb - ya, 0.0):.2f}" fill="#1f77b4"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
