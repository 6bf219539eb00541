"""Glue between ingested files and estimation frames: per-SCA winds,
downwind regions, unit assignment and frame building."""

from __future__ import annotations

import logging
from typing import Sequence

import pandas as pd

from . import frames
from .io import Boundaries
from .plume import PlumeConfig, plume_field, contour_downwind
from .spatial import (
    DegenerateGeometry,
    DegenerateWind,
    Point,
    Polygon,
    WindVector,
    assign_units,
    mean_wind,
    polygon_area,
    scaled_polygon_downwind,
    triangle_downwind,
)
from .timing import YearMonth

log = logging.getLogger(__name__)

DOWNWIND_METHODS = ("none", "simulated", "triangle", "scaled_polygon")


def wind_series(weather: pd.DataFrame, cb_id: str) -> list[tuple[YearMonth, WindVector]]:
    w = weather[weather["cb_id"].astype(str) == str(cb_id)]
    return [(YearMonth(int(r.year), int(r.month)), WindVector(float(r.u_east), float(r.v_north)))
            for r in w.itertuples()]


def sca_winds(bounds: Boundaries, weather: pd.DataFrame) -> dict[str, WindVector]:
    """Mean wind over the 24 months before each SCA's submission, taken
    from its borough's series."""
    cache: dict[str, list] = {}
    out = {}
    for s in bounds.schedules:
        if s.cb_id not in cache:
            cache[s.cb_id] = wind_series(weather, s.cb_id)
        out[s.sca_id] = mean_wind(cache[s.cb_id], s.submission)
    return out


def downwind_polygons(bounds: Boundaries, weather: pd.DataFrame | None, method: str = "simulated",
                      plume_cfg: PlumeConfig = PlumeConfig(), threads: int = 1) -> dict[str, Polygon]:
    """One downwind region per SCA. SCAs whose construction is degenerate
    (calm mean wind, thin shape) are skipped with a warning."""
    if method not in DOWNWIND_METHODS:
        raise ValueError(f"downwind method must be one of {DOWNWIND_METHODS}")
    if method == "none":
        return {}
    if weather is None:
        raise ValueError(f"downwind method {method!r} needs a weather file")
    winds = sca_winds(bounds, weather)
    out = {}
    for s in bounds.schedules:
        wind = winds[s.sca_id]
        try:
            if method == "triangle":
                out[s.sca_id] = triangle_downwind(s, wind)
            elif method == "scaled_polygon":
                out[s.sca_id] = scaled_polygon_downwind(s, wind)
            else:
                cb = bounds.cb(s.cb_id)
                pop = cb.population_1951 if cb.population_1951 is not None else 1.0
                field = plume_field(s, wind, plume_cfg, cb_area=polygon_area(cb.boundary), cb_pop=pop,
                                    threads=threads)
                out[s.sca_id] = contour_downwind(field, s.boundary, plume_cfg)
        except (DegenerateWind, DegenerateGeometry) as exc:
            log.warning("no downwind region for SCA %s: %s", s.sca_id, exc)
    return out


def _units(df: pd.DataFrame, id_col: str) -> list[tuple[str, Point]]:
    first = df.drop_duplicates(id_col)
    return [(str(i), Point(float(x), float(y)))
            for i, x, y in zip(first[id_col], first["easting_m"], first["northing_m"])]


def assign(df: pd.DataFrame, id_col: str, bounds: Boundaries,
           downwind: dict[str, Polygon] | None = None) -> pd.DataFrame:
    units = _units(df, id_col)
    return frames.assignments_frame(assign_units(units, bounds.cbs, bounds.schedules, downwind))


def station_frame(panel: pd.DataFrame, bounds: Boundaries, pollutant: str | None = "BlackSmoke",
                  downwind: dict[str, Polygon] | None = None) -> pd.DataFrame:
    a = assign(panel, "station_id", bounds, downwind)
    return frames.station_frame(panel, a, bounds.schedules, pollutant)


def individual_frame(people: pd.DataFrame, bounds: Boundaries,
                     downwind: dict[str, Polygon] | None = None,
                     weather: pd.DataFrame | None = None) -> pd.DataFrame:
    """Individual frame; weather exposure is (re)computed when a weather
    table is given and the people file lacks it."""
    people = people.copy()
    people["person_id"] = people["person_id"].astype(str)
    if weather is not None and not {"weather_temp", "weather_wind"} <= set(people.columns):
        people[["weather_temp", "weather_wind"]] = frames.weather_exposure(people, weather).to_numpy()
    a = assign(people, "person_id", bounds, downwind)
    return frames.individual_frame(people, a, bounds.schedules)


def split_sample(frame: pd.DataFrame, by: str) -> dict[str, pd.DataFrame]:
    """Subsamples by the values of ``by`` (e.g. sex), sorted by value."""
    return {str(k): g for k, g in sorted(frame.groupby(by), key=lambda kv: str(kv[0]))}


def ever_inside(frame: pd.DataFrame) -> pd.Series:
    return frame.groupby("unit")["inside"].transform("max")


def unit_columns(frame: pd.DataFrame, cols: Sequence[str]) -> pd.DataFrame:
    return frame.drop_duplicates("unit")[["unit", *cols]].reset_index(drop=True)
