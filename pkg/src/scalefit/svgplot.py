"""Deterministic SVG heatmaps for grid reports.

No plotting library: the figure is assembled from rects, polylines, and text
so identical reports yield byte-identical files. Failed cells render white;
the ARE color scale is fixed per figure family rather than data-driven.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .meta import ContourLine, GridCell, GridReport

# Fixed scale: ARE 0 maps to the first stop, >= ARE_SCALE_MAX to the last.
ARE_SCALE_MAX = 0.3
_STOPS = (
    (0.0, (255, 255, 204)),
    (0.5, (253, 141, 60)),
    (1.0, (128, 0, 38)),
)

_CELL = 48
_MARGIN_LEFT = 72
_MARGIN_TOP = 46
_MARGIN_BOTTOM = 96
_MARGIN_RIGHT = 24
FAIL_FILL = "#ffffff"
CONTOUR_STROKE = "#e66101"


def _lerp(a: float, b: float, t: float) -> float:
    return a + (b - a) * t

def _color(are_value: float) -> str:
    t = min(max(are_value / ARE_SCALE_MAX, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_STOPS, _STOPS[1:]):
        if t <= t1:
            local = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            rgb = tuple(round(_lerp(c0[i], c1[i], local)) for i in range(3))
            return "#{:02x}{:02x}{:02x}".format(*rgb)
    return "#{:02x}{:02x}{:02x}".format(*_STOPS[-1][1])


def _fmt(value: float) -> str:
    return f"{value:.2f}".rstrip("0").rstrip(".")


def _star_path(cx: float, cy: float, r: float) -> str:
    pts = []
    for k in range(10):
        angle = -np.pi / 2 + k * np.pi / 5
        radius = r if k % 2 == 0 else 0.45 * r
        pts.append(f"{cx + radius * np.cos(angle):.2f},{cy + radius * np.sin(angle):.2f}")
    return "M" + " L".join(pts) + " Z"


def grid_heatmap_svg(
    report: GridReport,
    contours: Sequence[ContourLine] = (),
    stars: Mapping[float, GridCell | None] | None = None,
) -> str:
    """Heatmap of ARE over (num_models, train_fraction), contours and stars overlaid."""
    xs = list(report.num_models_axis)
    ys = list(report.train_fraction_axis)
    n_x, n_y = len(xs), len(ys)
    width = _MARGIN_LEFT + n_x * _CELL + _MARGIN_RIGHT
    height = _MARGIN_TOP + n_y * _CELL + _MARGIN_BOTTOM

    def cell_origin(ix: int, iy: int) -> tuple[float, float]:
        # train_fraction increases upward
        return (_MARGIN_LEFT + ix * _CELL, _MARGIN_TOP + (n_y - 1 - iy) * _CELL)

    def axis_to_pixel(x_value: float, y_value: float) -> tuple[float, float]:
        ix = float(np.interp(x_value, xs, np.arange(n_x)))
        iy = float(np.interp(y_value, ys, np.arange(n_y)))
        px = _MARGIN_LEFT + (ix + 0.5) * _CELL
        py = _MARGIN_TOP + (n_y - 1 - iy + 0.5) * _CELL
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:.2f}" y="24" font-size="15" text-anchor="middle">'
        f"ARE grid: {report.family_id}</text>",
    ]

    by_pos = {(c.num_models, c.train_fraction): c for c in report.cells}
    parts.append('<g stroke="#cccccc" stroke-width="1">')
    for ix, x in enumerate(xs):
        for iy, y in enumerate(ys):
            cell = by_pos.get((x, y))
            px, py = cell_origin(ix, iy)
            if cell is None or cell.are is None:
                fill = FAIL_FILL
            else:
                fill = _color(cell.are)
            parts.append(f'<rect x="{px:.2f}" y="{py:.2f}" width="{_CELL}" height="{_CELL}" fill="{fill}"/>')
    parts.append("</g>")

    parts.append(f'<g stroke="{CONTOUR_STROKE}" stroke-width="2" fill="none">')
    for contour in contours:
        for line in contour.polylines:
            pixels = " ".join("{:.2f},{:.2f}".format(*axis_to_pixel(x, y)) for (x, y) in line)
            parts.append(f'<polyline points="{pixels}"><title>{contour.level:g} FLOPs</title></polyline>')
    parts.append("</g>")

    if stars:
        starred: dict[tuple, list[float]] = {}
        for threshold in sorted(stars, reverse=True):
            cell = stars[threshold]
            if cell is not None:
                starred.setdefault((cell.num_models, cell.train_fraction), []).append(threshold)
        parts.append('<g fill="#ffd700" stroke="#806000" stroke-width="1">')
        for (x, y), thresholds in sorted(starred.items()):
            px, py = axis_to_pixel(float(x), float(y))
            label = ", ".join(f"{t:g}" for t in thresholds)
            parts.append(f'<path d="{_star_path(px, py, 0.32 * _CELL)}"><title>ARE &#8804; {label}</title></path>')
        parts.append("</g>")

    parts.append('<g font-size="11" fill="#000000">')
    for ix, x in enumerate(xs):
        px = _MARGIN_LEFT + (ix + 0.5) * _CELL
        parts.append(f'<text x="{px:.2f}" y="{_MARGIN_TOP + n_y * _CELL + 16}" text-anchor="middle">{x}</text>')
    for iy, y in enumerate(ys):
        py = _MARGIN_TOP + (n_y - 1 - iy + 0.5) * _CELL + 4
        parts.append(f'<text x="{_MARGIN_LEFT - 8}" y="{py:.2f}" text-anchor="end">{_fmt(y)}</text>')
    mid_x = _MARGIN_LEFT + n_x * _CELL / 2
    parts.append(
        f'<text x="{mid_x:.2f}" y="{_MARGIN_TOP + n_y * _CELL + 36}" text-anchor="middle">number of models</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN_TOP + n_y * _CELL / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MARGIN_TOP + n_y * _CELL / 2:.2f})">train fraction</text>'
    )
    parts.append("</g>")

    # Legend: fixed swatches plus the white failure marker.
    legend_y = _MARGIN_TOP + n_y * _CELL + 52
    swatches = 8
    swatch_w = 26
    parts.append('<g font-size="10" fill="#000000">')
    for i in range(swatches):
        value = ARE_SCALE_MAX * i / (swatches - 1)
        parts.append(
            f'<rect x="{_MARGIN_LEFT + i * swatch_w}" y="{legend_y}" width="{swatch_w}" height="12" '
            f'fill="{_color(value)}" stroke="#cccccc"/>'
        )
    parts.append(f'<text x="{_MARGIN_LEFT}" y="{legend_y + 26}">ARE 0</text>')
    parts.append(
        f'<text x="{_MARGIN_LEFT + swatches * swatch_w}" y="{legend_y + 26}" text-anchor="end">'
        f"&#8805; {_fmt(ARE_SCALE_MAX)}</text>"
    )
    fail_x = _MARGIN_LEFT + swatches * swatch_w + 24
    parts.append(
        f'<rect x="{fail_x}" y="{legend_y}" width="{swatch_w}" height="12" fill="{FAIL_FILL}" stroke="#cccccc"/>'
    )
    parts.append(f'<text x="{fail_x + swatch_w + 6}" y="{legend_y + 10}">failed to fit</text>')
    parts.append("</g>")

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
