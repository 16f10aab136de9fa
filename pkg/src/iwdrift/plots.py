"""Minimal dependency-free SVG plots (path overlay and r-beta phase plane)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _polyline(xs, ys, to_px, color, width=1.5, dash=None):
    pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in (to_px(x, y) for x, y in zip(xs, ys)))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{extra} points="{pts}"/>'


def _frame(curves, size, margin, equal):
    allx = np.concatenate([np.asarray(c[0], dtype=float) for c in curves if len(c[0])] or [np.zeros(1)])
    ally = np.concatenate([np.asarray(c[1], dtype=float) for c in curves if len(c[1])] or [np.zeros(1)])
    x0, x1 = float(np.min(allx)), float(np.max(allx))
    y0, y1 = float(np.min(ally)), float(np.max(ally))
    sx = (size - 2 * margin) / max(x1 - x0, 1e-9)
    sy = (size - 2 * margin) / max(y1 - y0, 1e-9)
    if equal:
        sx = sy = min(sx, sy)

    def to_px(x, y):
        return margin + (x - x0) * sx, size - margin - (y - y0) * sy
    return to_px, (x0, x1, y0, y1)


def svg_plot(curves, title: str = "", xlabel: str = "", ylabel: str = "", size: int = 480,
             equal: bool = False) -> str:
    """Render ``curves`` = [(xs, ys, style)] where style is ``"ref"`` or a series index."""
    margin = 40
    to_px, (x0, x1, y0, y1) = _frame(curves, size, margin, equal)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>',
             f'<rect x="{margin}" y="{margin}" width="{size - 2 * margin}" height="{size - 2 * margin}" '
             'fill="none" stroke="#888"/>']
    for xs, ys, style in curves:
        if style == "ref":
            parts.append(_polyline(xs, ys, to_px, "#444", 2.0, "6,4"))
        else:
            parts.append(_polyline(xs, ys, to_px, COLORS[int(style) % len(COLORS)]))
    parts.append(f'<text x="{size / 2}" y="{margin - 14}" text-anchor="middle" font-size="14">{title}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">{xlabel} '
                 f'[{x0:.2f}, {x1:.2f}]</text>')
    parts.append(f'<text x="12" y="{size / 2}" font-size="12" transform="rotate(-90 12 {size / 2})" '
                 f'text-anchor="middle">{ylabel} [{y0:.2f}, {y1:.2f}]</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def path_overlay_svg(path, traces, out, columns) -> Path:
    """Reference path (dashed) with the driven trajectories on top."""
    xi, yi = columns.index("x"), columns.index("y")
    curves = [(path.x, path.y, "ref")]
    curves += [(tr[:, xi], tr[:, yi], k) for k, tr in enumerate(traces) if len(tr)]
    out = Path(out)
    out.write_text(svg_plot(curves, f"path tracking: {path.name}", "x (m)", "y (m)", equal=True))
    return out


def phase_plane_svg(traces, out, columns) -> Path:
    bi, ri = columns.index("beta"), columns.index("r")
    curves = [(tr[:, bi], tr[:, ri], k) for k, tr in enumerate(traces) if len(tr)]
    out = Path(out)
    out.write_text(svg_plot(curves, "r-beta phase plane", "beta (rad)", "r (rad/s)"))
    return out
