"""Gaussian plume dispersion from a grid of virtual chimneys over an SCA.

Concentrations are in arbitrary emission units; only the shape of the
field matters, which is why the contour threshold is a fraction of the
field maximum.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from shapely.geometry import box as shp_box
from shapely.ops import unary_union

from .spatial import (
    DegenerateWind,
    Point,
    Polygon,
    WindVector,
    centroid,
    points_in_polygon,
    polygon_area,
)
from .timing import TreatmentSchedule

log = logging.getLogger(__name__)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class DispersionCoefficients:
    """Pasquill-Gifford power-law coefficients, stability class C."""

    a_z: float = -2.341
    b_z: float = 0.9477
    c_z: float = -0.0020
    a_y: float = -2.054
    b_y: float = 1.0231
    c_y: float = -0.0076


@dataclass(frozen=True)
class PlumeConfig:
    chimney_height: float = 4.5
    chimney_spacing: float = 200.0
    min_downwind_distance: float = 1.0
    min_wind_speed: float = 0.5
    contour_threshold_fraction: float = 0.05
    grid_resolution: float = 100.0
    downwind_extent: float = 10_000.0
    grid_margin: float = 2_000.0

    def __post_init__(self):
        for name in ("chimney_height", "chimney_spacing", "min_downwind_distance",
                     "min_wind_speed", "grid_resolution", "downwind_extent", "grid_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.contour_threshold_fraction < 1:
            raise ValueError("contour_threshold_fraction must lie in (0, 1)")


@dataclass
class ConcentrationField:
    """Values at cell centres; ``values[j, i]`` sits at
    ``origin + ((i + 0.5) * resolution, (j + 0.5) * resolution)``."""

    origin: Point
    resolution: float
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.values.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)


def _sigmas(x: np.ndarray, c: DispersionCoefficients) -> tuple[np.ndarray, np.ndarray]:
    lx = np.log(x)
    sy = np.exp(c.a_y + c.b_y * lx + c.c_y * lx * lx)
    sz = np.exp(c.a_z + c.b_z * lx + c.c_z * lx * lx)
    return sy, sz


def sigma_yz(x: float, coeffs: DispersionCoefficients = DispersionCoefficients(),
             min_downwind_distance: float = 1.0) -> tuple[float, float]:
    """Lateral and vertical spread (m) at downwind distance ``x`` (m)."""
    if not x >= min_downwind_distance or min_downwind_distance <= 0:
        raise DomainError(f"downwind distance {x} below minimum {min_downwind_distance}")
    sy, sz = _sigmas(np.array([x], dtype=float), coeffs)
    return float(sy[0]), float(sz[0])


def _floor_wind(u: float, cfg: PlumeConfig) -> float:
    if u < cfg.min_wind_speed:
        log.warning("wind speed %.3g m/s below floor; clamped to %.3g", u, cfg.min_wind_speed)
        return cfg.min_wind_speed
    return u


def _concentration(x, y, S, u, cfg, coeffs):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    x, y = np.broadcast_arrays(x, y)
    m = x >= cfg.min_downwind_distance
    if m.any():
        sy, sz = _sigmas(x[m], coeffs)
        h = cfg.chimney_height
        out[m] = S / (2 * math.pi * u * sy * sz) * np.exp(
            -y[m] ** 2 / (2 * sy**2) - h * h / (2 * sz**2)
        )
    return out


def chimney_concentration(x, y, S: float, u: float, cfg: PlumeConfig = PlumeConfig(),
                          coeffs: DispersionCoefficients = DispersionCoefficients()):
    """Ground-level concentration at (x downwind, y crosswind) of one chimney.

    Zero upwind of ``cfg.min_downwind_distance``. Accepts scalars or arrays.
    """
    if S < 0:
        raise ValueError("emission rate must be non-negative")
    u = _floor_wind(u, cfg)
    out = _concentration(x, y, S, u, cfg, coeffs)
    return float(out) if out.ndim == 0 else out


def sca_emission(sca: TreatmentSchedule, cb_area: float, cb_population_1951: float) -> float:
    """Emission proxy: CB population times the SCA's share of CB area."""
    if not cb_area > 0:
        raise ValueError("CB area must be positive")
    return polygon_area(sca.boundary) / cb_area * cb_population_1951


def chimney_grid(boundary: Polygon, spacing: float, phase: tuple[float, float] = (0.5, 0.5)) -> list[Point]:
    """Axis-aligned chimney grid clipped to ``boundary``, row-major from the
    south-west. ``phase`` offsets the lattice from the bounding-box corner in
    units of ``spacing``. Falls back to the centroid when no lattice point
    lands inside."""
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    x0, y0, x1, y1 = boundary.bounds
    xs = x0 + (np.arange(int(math.floor((x1 - x0) / spacing)) + 2) + phase[0]) * spacing
    ys = y0 + (np.arange(int(math.floor((y1 - y0) / spacing)) + 2) + phase[1]) * spacing
    xs = xs[xs <= x1]
    ys = ys[ys <= y1]
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    inside = points_in_polygon(gx, gy, boundary)
    pts = [Point(float(a), float(b)) for a, b in zip(gx[inside], gy[inside])]
    return pts or [centroid(boundary)]


def _field_grid(boundary: Polygon, w: np.ndarray, cfg: PlumeConfig):
    res = cfg.grid_resolution
    x0, y0, x1, y1 = boundary.bounds
    reach = cfg.downwind_extent
    lo_x = x0 - cfg.grid_margin + min(0.0, w[0] * reach)
    hi_x = x1 + cfg.grid_margin + max(0.0, w[0] * reach)
    lo_y = y0 - cfg.grid_margin + min(0.0, w[1] * reach)
    hi_y = y1 + cfg.grid_margin + max(0.0, w[1] * reach)
    # anchored on the SCA corner so chimney-to-cell offsets do not depend on absolute position
    ox = x0 - math.ceil((x0 - lo_x) / res) * res
    oy = y0 - math.ceil((y0 - lo_y) / res) * res
    nx = int(math.ceil((hi_x - ox) / res))
    ny = int(math.ceil((hi_y - oy) / res))
    return Point(ox, oy), nx, ny


def plume_field(
    sca: TreatmentSchedule,
    wind: WindVector,
    cfg: PlumeConfig = PlumeConfig(),
    coeffs: DispersionCoefficients = DispersionCoefficients(),
    cb_area: float | None = None,
    cb_pop: float = 1.0,
    threads: int = 1,
) -> ConcentrationField:
    """Summed ground-level field of all chimneys in the SCA.

    ``cb_area`` defaults to the SCA's own area (emission equals ``cb_pop``).
    Rows may be evaluated on several threads; each cell sums chimneys in
    grid order, so output does not depend on ``threads``.
    """
    speed = wind.speed
    if not speed > 0:
        raise DegenerateWind("cannot orient a plume with zero wind")
    u = _floor_wind(speed, cfg)
    w = np.array([wind[0], wind[1]]) / speed
    if cb_area is None:
        cb_area = polygon_area(sca.boundary)
    S_total = sca_emission(sca, cb_area, cb_pop)
    chimneys = chimney_grid(sca.boundary, cfg.chimney_spacing)
    S = S_total / len(chimneys)
    origin, nx, ny = _field_grid(sca.boundary, w, cfg)
    res = cfg.grid_resolution
    xs = origin[0] + (np.arange(nx) + 0.5) * res
    ys = origin[1] + (np.arange(ny) + 0.5) * res

    def rows(j0, j1):
        gx, gy = np.meshgrid(xs, ys[j0:j1])
        acc = np.zeros_like(gx)
        for cx, cy in chimneys:
            dx, dy = gx - cx, gy - cy
            acc += _concentration(dx * w[0] + dy * w[1], -dx * w[1] + dy * w[0], S, u, cfg, coeffs)
        return acc

    bounds = np.linspace(0, ny, max(1, threads) + 1).astype(int)
    chunks = list(zip(bounds[:-1], bounds[1:]))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda c: rows(*c), chunks))
    else:
        parts = [rows(*c) for c in chunks]
    values = np.vstack(parts)
    meta = {
        "n_chimneys": len(chimneys),
        "emission_total": S_total,
        "emission_per_chimney": S,
        "wind_speed_used": u,
        "chimney_spacing": cfg.chimney_spacing,
        "contour_threshold_fraction": cfg.contour_threshold_fraction,
        "grid_resolution": res,
    }
    return ConcentrationField(origin=origin, resolution=res, values=values, meta=meta)


def _shapely_to_polygon(geom) -> Polygon:
    geom = geom.simplify(0)
    return Polygon(
        tuple(geom.exterior.coords),
        tuple(tuple(r.coords) for r in geom.interiors),
    )


def contour_downwind(field: ConcentrationField, sca_boundary: Polygon,
                     cfg: PlumeConfig = PlumeConfig()) -> Polygon:
    """Outline of the largest connected set of cells at or above
    ``contour_threshold_fraction * max``. Equal-size components are broken
    by distance to the SCA centroid."""
    vmax = float(field.values.max())
    if not vmax > 0:
        raise ValueError("field has no positive values; no contour to trace")
    mask = field.values >= cfg.contour_threshold_fraction * vmax
    labels, n = ndimage.label(mask)  # 4-connectivity
    if n == 0:
        raise ValueError("no cells above the contour threshold")
    sizes = np.bincount(labels.ravel())[1:]
    best = np.flatnonzero(sizes == sizes.max()) + 1
    if len(best) > 1:
        c = centroid(sca_boundary)
        gx, gy = field.cell_centres()
        dist = [np.min(np.hypot(gx[labels == k] - c[0], gy[labels == k] - c[1])) for k in best]
        best = best[[int(np.argmin(dist))]]
    jj, ii = np.nonzero(labels == best[0])
    res, (ox, oy) = field.resolution, field.origin
    cells = [shp_box(ox + i * res, oy + j * res, ox + (i + 1) * res, oy + (j + 1) * res)
             for j, i in zip(jj, ii)]
    geom = unary_union(cells)
    if geom.geom_type != "Polygon":
        # diagonal-only contacts cannot occur under 4-connectivity, keep the largest part anyway
        geom = max(geom.geoms, key=lambda g: g.area)
    return _shapely_to_polygon(geom)


def simulated_downwind(sca: TreatmentSchedule, wind: WindVector, cfg: PlumeConfig = PlumeConfig(),
                       coeffs: DispersionCoefficients = DispersionCoefficients(),
                       cb_area: float | None = None, cb_pop: float = 1.0) -> Polygon:
    f = plume_field(sca, wind, cfg, coeffs, cb_area, cb_pop)
    return contour_downwind(f, sca.boundary, cfg)
