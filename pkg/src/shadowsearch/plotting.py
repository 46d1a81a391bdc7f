"""Deterministic SVG rendering of hole densities and search patterns.

SVGs are assembled by hand (no plotting framework) so repeated runs emit
byte-identical files. Density contours come from marching squares on a fixed
evaluation grid; spiral paths reuse the simulator's own discretization, so
the drawn polyline is exactly the path the contact predicate sees.
"""
from __future__ import annotations

import numpy as np
from skimage import measure

from .envproc import GaussianMixture2D
from .sim import DEFAULT_REGION, ProbeParams, SearchRegion, SpiralParams, StrategyParams, spiral_path

_PANEL_PX = 240
_MARGIN_PX = 12
_GRID_N = 96
_CONTOUR_FRACTIONS = (0.75, 0.5, 0.25, 0.1)


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _density_grid(mixture: GaussianMixture2D, region: SearchRegion) -> tuple[np.ndarray, np.ndarray]:
    h = region.half_extent
    axis = np.linspace(-h, h, _GRID_N)
    dens = np.empty((_GRID_N, _GRID_N))
    for i, y in enumerate(axis):
        for j, x in enumerate(axis):
            dens[i, j] = np.exp(mixture.log_density((x, y)))
    return axis, dens


class _PanelTransform:
    def __init__(self, region: SearchRegion, x_off: float):
        self.scale = _PANEL_PX / (2.0 * region.half_extent)
        self.h = region.half_extent
        self.x_off = x_off

    def to_px(self, x: float, y: float) -> tuple[float, float]:
        # y axis points up in mm, down in SVG
        return (self.x_off + (x + self.h) * self.scale, (self.h - y) * self.scale)


def _contour_paths(axis: np.ndarray, dens: np.ndarray, tf: _PanelTransform) -> list[str]:
    paths = []
    peak = dens.max()
    if peak <= 0:
        return paths
    step = axis[1] - axis[0]
    for frac in _CONTOUR_FRACTIONS:
        for contour in measure.find_contours(dens, frac * peak):
            pts = []
            for row, col in contour:
                x = axis[0] + col * step
                y = axis[0] + row * step
                px, py = tf.to_px(x, y)
                pts.append(f"{_fmt(px)},{_fmt(py)}")
            if len(pts) >= 2:
                paths.append(
                    f'<polyline points="{" ".join(pts)}" fill="none" '
                    f'stroke="#7a8ca8" stroke-width="0.8" opacity="0.8"/>'
                )
    return paths


def _pattern_elems(params: StrategyParams, region: SearchRegion, tf: _PanelTransform) -> list[str]:
    elems = []
    if isinstance(params, ProbeParams):
        r_px = region.hole_clearance * tf.scale
        for px, py in params.points:
            cx, cy = tf.to_px(px, py)
            elems.append(
                f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r_px)}" '
                f'fill="#2060c0" fill-opacity="0.35" stroke="#2060c0" stroke-width="1"/>'
            )
    elif isinstance(params, SpiralParams):
        pts, _, _ = spiral_path(params, region)
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (tf.to_px(*p) for p in pts))
        elems.append(
            f'<polyline points="{coords}" fill="none" stroke="#2060c0" stroke-width="1.2"/>'
        )
    return elems


def plot_pattern(
    mixture: GaussianMixture2D,
    params: StrategyParams,
    trajectory: list[StrategyParams] | None = None,
    region: SearchRegion = DEFAULT_REGION,
) -> str:
    """Overlay of the mixture density and the search pattern.

    With a non-empty `trajectory` the panels render that time sequence as a
    strip; otherwise a single panel of `params` is drawn.
    """
    panels = list(trajectory) if trajectory else [params]
    width = len(panels) * (_PANEL_PX + _MARGIN_PX) + _MARGIN_PX
    height = _PANEL_PX + 2 * _MARGIN_PX
    axis, dens = _density_grid(mixture, region)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for i, p in enumerate(panels):
        x_off = _MARGIN_PX + i * (_PANEL_PX + _MARGIN_PX)
        tf = _PanelTransform(region, 0.0)
        parts.append(f'<g transform="translate({x_off},{_MARGIN_PX})">')
        parts.append(
            f'<rect width="{_PANEL_PX}" height="{_PANEL_PX}" fill="#fbfbfd" '
            f'stroke="#404040" stroke-width="1"/>'
        )
        parts.extend(_contour_paths(axis, dens, tf))
        parts.extend(_pattern_elems(p, region, tf))
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts)
