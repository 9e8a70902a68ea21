"""Minimal deterministic SVG line charts (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

__all__ = ["write_line_chart"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_line_chart(
    path: str | Path,
    series: Mapping[str, Sequence[float]],
    title: str = "",
    y_min: float = 0.0,
    y_max: float = 1.0,
    width: int = 720,
    height: int = 280,
):
    """Render named y-series (x = index) as polylines with fixed formatting."""
    margin_l, margin_r, margin_t, margin_b = 48, 16, 28, 32
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    n = max((len(v) for v in series.values()), default=0)
    span = max(y_max - y_min, 1e-9)

    def sx(i: int) -> float:
        return margin_l + (plot_w * i / max(n - 1, 1))

    def sy(v: float) -> float:
        v = min(max(v, y_min), y_max)
        return margin_t + plot_h * (1.0 - (v - y_min) / span)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin_l}" y="18" font-family="sans-serif" font-size="13">{title}</text>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{margin_t + plot_h}" stroke="#333"/>',
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" x2="{margin_l + plot_w}" '
        f'y2="{margin_t + plot_h}" stroke="#333"/>',
        f'<text x="{margin_l - 6}" y="{margin_t + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{y_max:g}</text>',
        f'<text x="{margin_l - 6}" y="{margin_t + plot_h + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_min:g}</text>',
        f'<text x="{margin_l + plot_w}" y="{margin_t + plot_h + 14}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{max(n - 1, 0)}</text>',
    ]
    for idx, (name, values) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(values))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(
            f'<text x="{margin_l + 8 + 110 * idx}" y="{margin_t - 8}" font-family="sans-serif" '
            f'font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
