"""Estimation frames: records joined with schedules and unit assignments.

Station frames and individual frames end up with the same treatment
columns (``unit``, ``t``, ``clock``, ``inside``, ``event``, ``operation``,
``downwind``, ``dw_event``, ``dw_operation``, ``control_class``), which is
what :func:`smokeshift.hdfe.estimate` and :mod:`smokeshift.staggered` read.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd

from .spatial import UnitAssignment
from .timing import CONCEPTION_OFFSET_MONTHS, TreatmentSchedule

OUTCOMES = ("birth_weight", "height", "years_education", "fluid_intelligence")


def assignments_frame(assignments: Sequence[UnitAssignment]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "unit_id": [a.unit_id for a in assignments],
            "assigned_cb": [a.cb_id for a in assignments],
            "inside_sca": [a.inside_sca for a in assignments],
            "downwind_of": [";".join(sorted(a.downwind_of)) for a in assignments],
            "control_class": [a.control_class.value for a in assignments],
        }
    )


def unit_treatment(unit_ids: pd.Series, assignments: pd.DataFrame,
                   schedules: Sequence[TreatmentSchedule]) -> pd.DataFrame:
    """Per-row treatment columns for ``unit_ids`` (index preserved)."""
    sub = {s.sca_id: s.submission.index for s in schedules}
    op = {s.sca_id: s.operation.index for s in schedules}
    a = assignments.set_index("unit_id")
    missing = set(unit_ids.unique()) - set(a.index)
    if missing:
        raise KeyError(f"units without an assignment: {sorted(missing)[:5]}")
    per_unit = pd.DataFrame(index=a.index)
    inside = a["inside_sca"].where(a["inside_sca"].notna() & (a["inside_sca"] != ""), None)
    per_unit["sca_id"] = inside
    per_unit["inside"] = inside.notna().astype(float)
    per_unit["event"] = inside.map(sub).astype(float)
    per_unit["operation"] = inside.map(op).astype(float)

    def earliest(dw, table):
        ids = [x for x in str(dw).split(";") if x] if isinstance(dw, str) else []
        return float(min(table[x] for x in ids)) if ids else np.nan

    dw = a["downwind_of"].fillna("")
    per_unit["downwind"] = (dw != "").astype(float)
    per_unit["dw_event"] = [earliest(x, sub) for x in dw]
    per_unit["dw_operation"] = [earliest(x, op) for x in dw]
    per_unit["control_class"] = a["control_class"]
    return per_unit.loc[unit_ids.to_numpy()].set_index(unit_ids.index)


def station_frame(panel: pd.DataFrame, assignments: pd.DataFrame,
                  schedules: Sequence[TreatmentSchedule], pollutant: str | None = "BlackSmoke") -> pd.DataFrame:
    """Station-month frame for one pollutant (``None`` keeps all rows)."""
    df = panel if pollutant is None else panel[panel["pollutant"] == pollutant]
    df = df.copy()
    df["unit"] = df["station_id"].astype(str)
    df["t"] = df["year"] * 12 + df["month"] - 1
    df["clock"] = df["t"]
    treat = unit_treatment(df["unit"], assignments, schedules)
    return pd.concat([df, treat], axis=1)


def individual_frame(people: pd.DataFrame, assignments: pd.DataFrame,
                     schedules: Sequence[TreatmentSchedule]) -> pd.DataFrame:
    """Person-level frame; the treatment clock is the conception month and
    the area is CB x Inside."""
    df = people.copy()
    df["unit"] = df["person_id"].astype(str)
    df["t"] = df["birth_year"] * 12 + df["birth_month"] - 1
    df["clock"] = df["t"] - CONCEPTION_OFFSET_MONTHS
    treat = unit_treatment(df["unit"], assignments, schedules)
    df = pd.concat([df, treat], axis=1)
    df["area"] = df["cb_id"].astype(str) + "|" + df["inside"].astype(int).astype(str)
    df["male"] = (df["sex"] == "M").astype(float)
    return df


def weather_exposure(births: pd.DataFrame, weather: pd.DataFrame, after_birth_months: int = 24) -> pd.DataFrame:
    """Mean temperature and wind speed per person over
    [conception, birth + ``after_birth_months``] in the birth CB.

    ``births`` needs ``cb_id``, ``birth_year``, ``birth_month``; ``weather``
    needs ``cb_id``, ``year``, ``month``, ``u_east``, ``v_north``,
    ``temperature``.
    """
    w = weather.assign(t=weather["year"] * 12 + weather["month"] - 1,
                       speed=np.hypot(weather["u_east"], weather["v_north"]))
    out_temp = np.full(len(births), np.nan)
    out_wind = np.full(len(births), np.nan)
    bt = (births["birth_year"] * 12 + births["birth_month"] - 1).to_numpy()
    cbs = births["cb_id"].astype(str).to_numpy()
    for cb, g in w.groupby(w["cb_id"].astype(str)):
        g = g.sort_values("t")
        t = g["t"].to_numpy()
        if len(t) and not np.array_equal(t, np.arange(t[0], t[0] + len(t))):
            raise ValueError(f"weather series for CB {cb} has gaps")
        ctemp = np.concatenate([[0.0], np.cumsum(g["temperature"].to_numpy())])
        cwind = np.concatenate([[0.0], np.cumsum(g["speed"].to_numpy())])
        idx = np.flatnonzero(cbs == cb)
        lo = bt[idx] - CONCEPTION_OFFSET_MONTHS - t[0]
        hi = bt[idx] + after_birth_months - t[0] + 1
        ok = (lo >= 0) & (hi <= len(t))
        n = (hi - lo)[ok]
        out_temp[idx[ok]] = (ctemp[hi[ok]] - ctemp[lo[ok]]) / n
        out_wind[idx[ok]] = (cwind[hi[ok]] - cwind[lo[ok]]) / n
    return pd.DataFrame({"weather_temp": out_temp, "weather_wind": out_wind}, index=births.index)


def gta_panel(frame: pd.DataFrame, outcome: str) -> pd.DataFrame:
    """Unit/time/outcome/group layout for group-time ATT estimation.

    The group is the unit's submission month when it sits inside an SCA;
    everyone else is never-treated (group NaN).
    """
    g = frame["event"].where(frame["inside"] > 0)
    return pd.DataFrame(
        {"unit": frame["unit"].to_numpy(), "t": frame["clock"].to_numpy(),
         "y": frame[outcome].to_numpy(dtype=float), "g": g.to_numpy(dtype=float)}
    )
