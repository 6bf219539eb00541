"""Planar geometry for treatment assignment and downwind regions.

Coordinates are projected metres (easting, northing). Polygons are simple
rings with optional holes; points on any ring edge count as inside.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from shapely.geometry import LinearRing

from .timing import TreatmentSchedule, YearMonth

log = logging.getLogger(__name__)

DOWNWIND_LENGTH_M = 5000.0
TRIANGLE_VERTEX_ANGLE_DEG = 45.0
SCALED_HALF_ANGLE_DEG = 22.5
MEAN_WIND_MONTHS = 24
# scaled polygon: crosswind extent below this share of the along-wind extent is degenerate
MIN_CROSSWIND_ASPECT = 0.05


class GeometryError(ValueError):
    pass


class DegenerateWind(GeometryError):
    pass


class DegenerateGeometry(GeometryError):
    pass


class OverlapError(GeometryError):
    pass


class Point(NamedTuple):
    easting: float
    northing: float


class WindVector(NamedTuple):
    u_east: float
    v_north: float

    @property
    def speed(self) -> float:
        return math.hypot(self.u_east, self.v_north)

    @property
    def is_calm(self) -> bool:
        return self.u_east == 0.0 and self.v_north == 0.0


Ring = tuple[Point, ...]


def _ring_signed_area(ring: Sequence[Point]) -> float:
    xy = np.asarray(ring, dtype=float)
    xy = xy - xy[0]  # local origin keeps the cross products well conditioned
    x, y = xy[:-1, 0], xy[:-1, 1]
    x1, y1 = xy[1:, 0], xy[1:, 1]
    return 0.5 * float(np.sum(x * y1 - x1 * y))


def _ring_centroid(ring: Sequence[Point]) -> tuple[float, float, float]:
    """(signed area, cx, cy) of a closed ring."""
    xy = np.asarray(ring, dtype=float)
    o = xy[0].copy()
    xy = xy - o
    x, y = xy[:-1, 0], xy[:-1, 1]
    x1, y1 = xy[1:, 0], xy[1:, 1]
    cross = x * y1 - x1 * y
    a = 0.5 * cross.sum()
    if a == 0:
        return 0.0, math.nan, math.nan
    cx = ((x + x1) * cross).sum() / (6 * a)
    cy = ((y + y1) * cross).sum() / (6 * a)
    return float(a), float(cx + o[0]), float(cy + o[1])


def _validate_ring(ring: Ring, what: str) -> None:
    if len(ring) < 4:
        raise GeometryError(f"{what} ring needs at least 4 stored vertices, got {len(ring)}")
    if ring[0] != ring[-1]:
        raise GeometryError(f"{what} ring is not closed (first vertex != last vertex)")
    if not all(math.isfinite(c) for p in ring for c in p):
        raise GeometryError(f"{what} ring has non-finite coordinates")
    if _ring_signed_area(ring) == 0:
        raise GeometryError(f"{what} ring has zero area")
    if not LinearRing(ring).is_simple:
        raise GeometryError(f"{what} ring is self-intersecting")


@dataclass(frozen=True)
class Polygon:
    exterior: Ring
    holes: tuple[Ring, ...] = field(default=())

    def __post_init__(self):
        ext = tuple(Point(float(x), float(y)) for x, y in self.exterior)
        holes = tuple(tuple(Point(float(x), float(y)) for x, y in h) for h in self.holes)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", holes)
        _validate_ring(ext, "exterior")
        for h in holes:
            _validate_ring(h, "hole")

    @classmethod
    def from_open(cls, exterior: Iterable, holes: Iterable[Iterable] = ()) -> "Polygon":
        """Build from rings that do not repeat their first vertex."""

        def close(r):
            r = [tuple(p) for p in r]
            return r + [r[0]] if r and r[0] != r[-1] else r

        return cls(tuple(close(exterior)), tuple(tuple(close(h)) for h in holes))

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float) -> "Polygon":
        return cls.from_open([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @property
    def rings(self) -> tuple[Ring, ...]:
        return (self.exterior,) + self.holes

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xy = np.asarray(self.exterior)
        return float(xy[:, 0].min()), float(xy[:, 1].min()), float(xy[:, 0].max()), float(xy[:, 1].max())

    def vertices(self) -> np.ndarray:
        """Distinct exterior vertices as an (n, 2) array."""
        return np.asarray(self.exterior[:-1], dtype=float)

    def to_coords(self) -> list[list[list[float]]]:
        """GeoJSON-style coordinate list, exterior counter-clockwise."""
        out = []
        for i, ring in enumerate(self.rings):
            pts = [list(p) for p in ring]
            ccw = _ring_signed_area(ring) > 0
            if ccw != (i == 0):
                pts = pts[::-1]
            out.append(pts)
        return out


def _on_segment(px, py, ax, ay, bx, by, tol):
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    seglen = math.hypot(bx - ax, by - ay)
    within = (
        (px >= min(ax, bx) - tol) & (px <= max(ax, bx) + tol)
        & (py >= min(ay, by) - tol) & (py <= max(ay, by) + tol)
    )
    return within & (np.abs(cross) <= tol * max(seglen, 1.0))


def points_in_polygon(xs, ys, poly: Polygon, tol: float = 1e-9) -> np.ndarray:
    """Vectorised even-odd containment; boundary points are inside."""
    px = np.atleast_1d(np.asarray(xs, dtype=float))
    py = np.atleast_1d(np.asarray(ys, dtype=float))
    inside = np.zeros(px.shape, dtype=bool)
    boundary = np.zeros(px.shape, dtype=bool)
    x0, y0, x1, y1 = poly.bounds
    scale = max(abs(x0), abs(y0), abs(x1), abs(y1), 1.0)
    eps = tol * scale
    for ring in poly.rings:
        xy = np.asarray(ring, dtype=float)
        for (ax, ay), (bx, by) in zip(xy[:-1], xy[1:]):
            boundary |= _on_segment(px, py, ax, ay, bx, by, eps)
            crosses = (ay > py) != (by > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_int = ax + (py - ay) * (bx - ax) / (by - ay)
            inside ^= crosses & (px < x_int)
    return inside | boundary


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    return bool(points_in_polygon([p[0]], [p[1]], poly)[0])


def polygon_area(poly: Polygon) -> float:
    area = abs(_ring_signed_area(poly.exterior)) - sum(abs(_ring_signed_area(h)) for h in poly.holes)
    if area <= 0:
        raise GeometryError("polygon has non-positive area after removing holes")
    return area


def centroid(poly: Polygon) -> Point:
    a, cx, cy = _ring_centroid(poly.exterior)
    a = abs(a)
    mx, my, total = a * cx, a * cy, a
    for h in poly.holes:
        ha, hx, hy = _ring_centroid(h)
        ha = abs(ha)
        mx -= ha * hx
        my -= ha * hy
        total -= ha
    if total <= 0:
        raise GeometryError("centroid undefined for zero-area polygon")
    return Point(mx / total, my / total)


def mean_wind(series: Iterable[tuple[YearMonth, WindVector]], submission: YearMonth) -> WindVector:
    """Component-wise mean over the 24 months before ``submission``.

    A result of exactly (0, 0) is returned but logged as degenerate; the
    downwind constructions reject it.
    """
    lo = submission.index - MEAN_WIND_MONTHS
    hi = submission.index - 1
    us, vs, months = [], [], set()
    for ym, w in series:
        if lo <= ym.index <= hi:
            us.append(w[0])
            vs.append(w[1])
            months.add(ym.index)
    if not us:
        raise ValueError(f"no wind observations in the {MEAN_WIND_MONTHS} months before {submission}")
    if len(months) < MEAN_WIND_MONTHS:
        log.warning("mean wind before %s uses %d of %d months", submission, len(months), MEAN_WIND_MONTHS)
    out = WindVector(float(np.mean(us)), float(np.mean(vs)))
    if out.is_calm:
        log.warning("mean wind before %s is exactly zero (degenerate direction)", submission)
    return out


def _unit_axes(wind: WindVector) -> tuple[np.ndarray, np.ndarray]:
    speed = wind.speed
    if not speed > 0:
        raise DegenerateWind("wind vector has zero length; downwind direction undefined")
    w = np.array([wind[0], wind[1]]) / speed
    n = np.array([-w[1], w[0]])  # left of the wind
    return w, n


def _rotate(v: np.ndarray, deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def triangle_downwind(
    sca: TreatmentSchedule,
    wind: WindVector,
    height: float = DOWNWIND_LENGTH_M,
    vertex_angle_deg: float = TRIANGLE_VERTEX_ANGLE_DEG,
) -> Polygon:
    """Isosceles triangle with its apex on the SCA centroid, opening downwind."""
    w, n = _unit_axes(wind)
    apex = np.asarray(centroid(sca.boundary))
    base = apex + height * w
    half = height * math.tan(math.radians(vertex_angle_deg / 2))
    right = base - half * n
    left = base + half * n
    return Polygon.from_open([apex, right, left])


def scaled_polygon_downwind(
    sca: TreatmentSchedule,
    wind: WindVector,
    length: float = DOWNWIND_LENGTH_M,
    half_angle_deg: float = SCALED_HALF_ANGLE_DEG,
) -> Polygon:
    """Quadrilateral anchored on the SCA's crosswind extremes.

    The boundary is projected on the axis orthogonal to the wind. The two
    extreme vertices become anchors (ties broken towards the most upwind
    vertex); from each anchor a segment of ``length`` leaves at
    ``half_angle_deg`` to the wind, splayed outwards.
    """
    w, n = _unit_axes(wind)
    v = sca.boundary.vertices()
    across = v @ n
    along = v @ w
    width = across.max() - across.min()
    extent = along.max() - along.min()
    tie = 1e-9 * max(1.0, np.abs(v).max())
    if width <= max(tie, MIN_CROSSWIND_ASPECT * extent):
        raise DegenerateGeometry(
            f"SCA {sca.sca_id}: crosswind width {width:.1f} m too small for a scaled polygon "
            f"(along-wind extent {extent:.1f} m)"
        )

    def anchor(mask):
        idx = np.flatnonzero(mask)
        return v[idx[np.argmin(along[idx])]]

    left = anchor(across >= across.max() - tie)
    right = anchor(across <= across.min() + tie)
    left_end = left + length * _rotate(w, half_angle_deg)
    right_end = right + length * _rotate(w, -half_angle_deg)
    return Polygon.from_open([right, right_end, left_end, left])


class ControlClass(enum.Enum):
    INSIDE_SCA = "InsideSCA"
    OUTSIDE_SCA_IN_ADOPTING_CB = "OutsideSCAInAdoptingCB"
    NON_ADOPTING_CB = "NonAdoptingCB"
    OUTSIDE_CB_NEVER_ADOPTER = "OutsideCBNeverAdopter"


@dataclass(frozen=True)
class UnitAssignment:
    unit_id: str
    cb_id: str | None
    inside_sca: str | None
    downwind_of: frozenset[str]
    control_class: ControlClass

    def __post_init__(self):
        if self.inside_sca is not None and self.control_class is not ControlClass.INSIDE_SCA:
            raise ValueError("a unit inside an SCA must have control class InsideSCA")


@dataclass(frozen=True)
class CountyBorough:
    cb_id: str
    boundary: Polygon
    adopting: bool
    population_1951: float | None = None
    attributes: dict = field(default_factory=dict, compare=False)


def assign_units(
    units: Sequence[tuple[str, Point]],
    cbs: Sequence[CountyBorough],
    scas: Sequence[TreatmentSchedule],
    downwind_polys: dict[str, Polygon] | None = None,
) -> list[UnitAssignment]:
    """Classify units against CB and SCA polygons.

    Raises ``OverlapError`` if a unit falls inside two SCA boundaries.
    Units inside two CB polygons (shared edges) take the first CB listed.
    """
    downwind_polys = downwind_polys or {}
    ids = [u[0] for u in units]
    xs = np.array([u[1][0] for u in units], dtype=float)
    ys = np.array([u[1][1] for u in units], dtype=float)
    n = len(ids)

    cb_of = np.full(n, -1)
    for k, cb in enumerate(cbs):
        hit = points_in_polygon(xs, ys, cb.boundary) & (cb_of < 0)
        cb_of[hit] = k

    sca_of = np.full(n, -1)
    for k, s in enumerate(scas):
        hit = points_in_polygon(xs, ys, s.boundary)
        clash = hit & (sca_of >= 0)
        if clash.any():
            i = int(np.flatnonzero(clash)[0])
            raise OverlapError(
                f"unit {ids[i]} lies inside SCAs {scas[sca_of[i]].sca_id} and {s.sca_id}"
            )
        sca_of[hit] = k

    dw: list[set[str]] = [set() for _ in range(n)]
    for k, s in enumerate(scas):
        poly = downwind_polys.get(s.sca_id)
        if poly is None:
            continue
        hit = points_in_polygon(xs, ys, poly) & ~points_in_polygon(xs, ys, s.boundary)
        for i in np.flatnonzero(hit):
            dw[i].add(s.sca_id)

    out = []
    for i in range(n):
        cb = cbs[cb_of[i]] if cb_of[i] >= 0 else None
        sca = scas[sca_of[i]] if sca_of[i] >= 0 else None
        if sca is not None:
            cls = ControlClass.INSIDE_SCA
            cb_id = cb.cb_id if cb is not None else sca.cb_id
        elif cb is None:
            cls, cb_id = ControlClass.OUTSIDE_CB_NEVER_ADOPTER, None
        elif cb.adopting:
            cls, cb_id = ControlClass.OUTSIDE_SCA_IN_ADOPTING_CB, cb.cb_id
        else:
            cls, cb_id = ControlClass.NON_ADOPTING_CB, cb.cb_id
        out.append(
            UnitAssignment(
                unit_id=ids[i],
                cb_id=cb_id,
                inside_sca=sca.sca_id if sca is not None else None,
                downwind_of=frozenset(dw[i]),
                control_class=cls,
            )
        )
    return out
