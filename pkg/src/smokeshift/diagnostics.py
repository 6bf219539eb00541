"""Adoption-timing diagnostics: when did each borough reach a given SCA
coverage, what predicts that date, and were the areas chosen for SCAs
already different before treatment."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
from shapely.geometry import Polygon as ShpPolygon
from shapely.ops import unary_union

from .hdfe import EstimateTable, cross_section_ols
from .io import Boundaries
from .spatial import Polygon, polygon_area
from .timing import YearMonth

TIMING_BASE = YearMonth(1950, 1)


def _shp(p: Polygon) -> ShpPolygon:
    return ShpPolygon(p.exterior, p.holes)


def timing_index(bounds: Boundaries, coverage: float = 0.10, base: YearMonth = TIMING_BASE,
                 date: str = "operation") -> pd.DataFrame:
    """Months from ``base`` until the union of a borough's SCAs (counted
    from their ``date``: "operation" or "submission") first covers
    ``coverage`` of its area. NaN for boroughs that never get there."""
    if date not in ("operation", "submission"):
        raise ValueError("date must be 'operation' or 'submission'")
    if not 0 < coverage <= 1:
        raise ValueError("coverage must lie in (0, 1]")
    rows = []
    for cb in bounds.cbs:
        area = polygon_area(cb.boundary)
        cb_shape = _shp(cb.boundary)
        scas = sorted((s for s in bounds.schedules if s.cb_id == cb.cb_id),
                      key=lambda s: (getattr(s, date).index, s.sca_id))
        hit = math.nan
        covered = []
        for s in scas:
            covered.append(_shp(s.boundary))
            share = unary_union(covered).intersection(cb_shape).area / area
            if share >= coverage - 1e-12:
                hit = float(getattr(s, date).index - base.index)
                break
        rows.append({"cb_id": cb.cb_id, "adopting": cb.adopting, "timing": hit,
                     "n_scas": len(scas), "area_km2": area / 1e6})
    return pd.DataFrame(rows)


def cb_characteristics(bounds: Boundaries, station_frame: pd.DataFrame | None = None,
                       pre_period_end: YearMonth = YearMonth(1955, 12), outcome: str = "concentration",
                       coverage: float = 0.10, base: YearMonth = TIMING_BASE) -> pd.DataFrame:
    """One row per borough: timing index, density, SES share and mean
    pre-period pollution (stations' monthly readings up to
    ``pre_period_end``)."""
    df = timing_index(bounds, coverage, base)
    dens, ses = [], []
    for cb in bounds.cbs:
        a = cb.attributes
        d = a.get("density")
        if d is None and cb.population_1951 is not None:
            d = cb.population_1951 / (polygon_area(cb.boundary) / 1e6)
        dens.append(np.nan if d is None else float(d))
        ses.append(float(a.get("ses_share", np.nan)))
    df["density"] = dens
    df["log_density"] = np.log(df["density"])
    df["ses_share"] = ses
    if station_frame is not None:
        pre = station_frame[station_frame["t"] <= pre_period_end.index]
        by_cb = pre.groupby(pre["cb_id"].astype(str))[outcome].mean()
        df["pre_pollution"] = df["cb_id"].map(by_cb).astype(float)
    return df


def timing_regressions(chars: pd.DataFrame,
                       regressors=("log_density", "ses_share", "pre_pollution")) -> dict[str, EstimateTable]:
    """Timing index on each characteristic alone, then jointly; adopting
    boroughs with a defined timing only."""
    rows = chars[chars["adopting"] & chars["timing"].notna()]
    regs = [r for r in regressors if r in rows and rows[r].notna().any()]
    out = {r: cross_section_ols(rows, "timing", [r]) for r in regs}
    if len(regs) > 1:
        out["joint"] = cross_section_ols(rows, "timing", regs)
    return out


def selection_regression(station_frame: pd.DataFrame, pre_period_end: YearMonth | None = None,
                         outcome: str = "concentration") -> EstimateTable:
    """Pre-treatment station mean on an ever-inside indicator with borough
    fixed effects, within adopting boroughs.

    Pre-treatment means months before the station's own submission for
    inside stations and before the borough's first submission otherwise;
    ``pre_period_end`` caps both.
    """
    df = station_frame[station_frame["control_class"].isin(["InsideSCA", "OutsideSCAInAdoptingCB"])].copy()
    first_sub = df.groupby("cb_id")["event"].transform("min")
    cutoff = df["event"].fillna(first_sub)
    keep = df["t"] < cutoff
    if pre_period_end is not None:
        keep &= df["t"] <= pre_period_end.index
    pre = df[keep]
    rows = pre.groupby("unit").agg(pre_mean=(outcome, "mean"), ever_inside=("inside", "max"),
                                   cb_id=("cb_id", "first")).reset_index()
    return cross_section_ols(rows, "pre_mean", ["ever_inside"], fixed_effects=["cb_id"])
