"""Self-contained SVG line plots for luminance traces."""

from __future__ import annotations

from typing import Dict, Sequence
from xml.sax.saxutils import escape

PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")


def line_plot_svg(series: Dict[str, Sequence[float]], title: str = "", x_label: str = "frame",
                  y_label: str = "mean luminance", width: int = 640, height: int = 360) -> str:
    """One polyline per series over a shared frame axis, with a legend and y-range labels."""
    if not series or all(len(v) == 0 for v in series.values()):
        raise ValueError("nothing to plot")
    left, right, top, bottom = 64, 16, 32, 44
    pw, ph = width - left - right, height - top - bottom
    values = [float(v) for vals in series.values() for v in vals]
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n = max(len(v) for v in series.values())

    def xy(i, v):
        x = left + (pw * i / (n - 1) if n > 1 else pw / 2)
        y = top + ph * (1.0 - (float(v) - lo) / (hi - lo))
        return f"{x:.2f},{y:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{hi:.4g}</text>',
           f'<text x="{left - 6}" y="{top + ph}" text-anchor="end">{lo:.4g}</text>',
           f'<text x="{left}" y="{height - 24}" text-anchor="middle">0</text>',
           f'<text x="{left + pw}" y="{height - 24}" text-anchor="middle">{n - 1}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(x_label)}</text>',
           f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(y_label)}</text>']
    for k, (name, vals) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        if len(vals):
            pts = " ".join(xy(i, v) for i, v in enumerate(vals))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 16 + 16 * k
        out.append(f'<line x1="{left + pw - 110}" y1="{ly - 4}" x2="{left + pw - 90}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 84}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
