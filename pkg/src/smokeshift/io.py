"""Ingest and emit the interchange formats: panel CSV, boundary GeoJSON,
generic result CSV/JSON, and the per-run manifest.

Floats go out with 17 significant digits (CSV) or Python's shortest
round-trip repr (JSON), so re-reading a file gives back the same doubles.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from .spatial import CountyBorough, GeometryError, Polygon, points_in_polygon
from .timing import TreatmentSchedule, YearMonth

log = logging.getLogger(__name__)

PANEL_COLUMNS = ("station_id", "cb_id", "easting_m", "northing_m", "year", "month", "pollutant", "concentration")
POLLUTANTS = ("BlackSmoke", "SO2")
FLOAT_FORMAT = "%.17g"


class SchemaError(ValueError):
    pass


class DuplicateKey(SchemaError):
    pass


class BoundaryError(ValueError):
    pass


def _rows(mask: np.ndarray, limit: int = 10) -> list[int]:
    # 1-based file line numbers, header is line 1
    return [int(i) + 2 for i in np.flatnonzero(mask)[:limit]]


def _numeric(df: pd.DataFrame, col: str) -> np.ndarray:
    raw = df[col].str.strip()
    vals = pd.to_numeric(raw, errors="coerce")
    bad = vals.isna().to_numpy() | (raw == "").to_numpy()
    if bad.any():
        raise SchemaError(f"column {col}: non-numeric value on line(s) {_rows(bad)}")
    # astype(float) on the strings uses correctly rounded parsing
    return raw.astype(float).to_numpy()


def ingest_panel(path: str | os.PathLike) -> pd.DataFrame:
    """Read and validate a station panel CSV.

    Returns a frame with the panel columns typed (ids as str, year/month as
    int64, coordinates and concentration as float64). Errors name the file
    line numbers of offending rows.
    """
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    cols = tuple(c.strip() for c in df.columns)
    if cols != PANEL_COLUMNS:
        raise SchemaError(f"panel header must be {','.join(PANEL_COLUMNS)}; got {','.join(cols)}")
    df.columns = list(cols)
    out = pd.DataFrame({"station_id": df["station_id"].str.strip(), "cb_id": df["cb_id"].str.strip()})
    for c in ("station_id", "cb_id"):
        empty = (out[c] == "").to_numpy()
        if empty.any():
            raise SchemaError(f"column {c}: empty identifier on line(s) {_rows(empty)}")
    for c in ("easting_m", "northing_m", "concentration"):
        out[c] = _numeric(df, c)
        bad = ~np.isfinite(out[c].to_numpy())
        if bad.any():
            raise SchemaError(f"column {c}: non-finite value on line(s) {_rows(bad)}")
    for c in ("year", "month"):
        v = _numeric(df, c)
        frac = v != np.floor(v)
        if frac.any():
            raise SchemaError(f"column {c}: non-integer value on line(s) {_rows(frac)}")
        out[c] = v.astype(np.int64)
    bad = ((out["month"] < 1) | (out["month"] > 12)).to_numpy()
    if bad.any():
        raise SchemaError(f"month outside 1..12 on line(s) {_rows(bad)}")
    out["pollutant"] = df["pollutant"].str.strip()
    bad = ~out["pollutant"].isin(POLLUTANTS).to_numpy()
    if bad.any():
        raise SchemaError(f"pollutant must be one of {POLLUTANTS}; line(s) {_rows(bad)}")
    bad = (out["concentration"] < 0).to_numpy()
    if bad.any():
        raise SchemaError(f"negative concentration on line(s) {_rows(bad)}")
    dup = out.duplicated(["station_id", "year", "month", "pollutant"], keep=False).to_numpy()
    if dup.any():
        raise DuplicateKey(f"duplicate (station, time, pollutant) on line(s) {_rows(dup)}")
    return out[list(PANEL_COLUMNS)]


def read_table(path: str | os.PathLike, id_columns: Sequence[str] = ()) -> pd.DataFrame:
    """Generic CSV reader for files this package writes (individuals,
    weather, assignments). Identifier columns stay strings."""
    dtype = {c: str for c in id_columns}
    return pd.read_csv(path, dtype=dtype, float_precision="round_trip", keep_default_na=True)


def read_individuals(path) -> pd.DataFrame:
    df = read_table(path, ("person_id", "cb_id", "sex", "ethnicity"))
    need = {"person_id", "cb_id", "easting_m", "northing_m", "birth_year", "birth_month", "sex"}
    missing = need - set(df.columns)
    if missing:
        raise SchemaError(f"individuals file lacks columns {sorted(missing)}")
    bad = ~df["birth_month"].between(1, 12).to_numpy()
    if bad.any():
        raise SchemaError(f"birth_month outside 1..12 on line(s) {_rows(bad)}")
    if "low_ses_area" in df:
        df["low_ses_area"] = df["low_ses_area"].astype(str).str.lower().map({"true": True, "false": False})
    return df


def read_weather(path) -> pd.DataFrame:
    df = read_table(path, ("cb_id",))
    need = {"cb_id", "year", "month", "u_east", "v_north"}
    missing = need - set(df.columns)
    if missing:
        raise SchemaError(f"weather file lacks columns {sorted(missing)}")
    return df


# --------------------------------------------------------------------------
# boundaries


@dataclass
class Boundaries:
    cbs: list[CountyBorough]
    schedules: list[TreatmentSchedule]

    def cb(self, cb_id: str) -> CountyBorough:
        for c in self.cbs:
            if c.cb_id == cb_id:
                return c
        raise KeyError(cb_id)


_CB_KEYS = {"kind", "id", "adoption"}
_SCA_KEYS = {"kind", "id", "cb_id", "submission", "operation"}


def _polygon_from_geometry(geom: dict, what: str) -> Polygon:
    if not isinstance(geom, dict) or geom.get("type") != "Polygon":
        raise GeometryError(f"{what}: geometry must be a GeoJSON Polygon")
    rings = geom.get("coordinates") or []
    if not rings:
        raise GeometryError(f"{what}: polygon has no rings")
    try:
        return Polygon(tuple(map(tuple, rings[0])), tuple(tuple(map(tuple, r)) for r in rings[1:]))
    except GeometryError as exc:
        raise GeometryError(f"{what}: {exc}") from None


def ingest_boundaries(path: str | os.PathLike) -> Boundaries:
    """CB and SCA polygons from a FeatureCollection.

    CB features need ``kind="cb"``, ``id``, ``adoption``; SCA features need
    ``kind="sca"``, ``id``, ``cb_id``, ``submission``, ``operation``
    (``YYYY-MM``). Extra CB properties (``population_1951``, ``density``,
    ...) are kept as attributes. An SCA reaching outside its CB is logged,
    not rejected.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise BoundaryError("boundary file must be a GeoJSON FeatureCollection")
    cbs: list[CountyBorough] = []
    scas: list[tuple[int, dict, Polygon]] = []
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        kind = props.get("kind")
        what = f"feature {i} ({props.get('id', '?')})"
        if kind == "cb":
            missing = _CB_KEYS - set(props)
            if missing:
                raise BoundaryError(f"{what}: missing properties {sorted(missing)}")
            if props["adoption"] not in ("adopting", "non_adopting"):
                raise BoundaryError(f"{what}: adoption must be 'adopting' or 'non_adopting'")
            poly = _polygon_from_geometry(feat.get("geometry"), what)
            attrs = {k: v for k, v in props.items() if k not in _CB_KEYS | {"population_1951", "cb_id"}}
            pop = props.get("population_1951")
            cbs.append(CountyBorough(str(props["id"]), poly, props["adoption"] == "adopting",
                                     None if pop is None else float(pop), attrs))
        elif kind == "sca":
            missing = _SCA_KEYS - set(props)
            if missing:
                raise BoundaryError(f"{what}: missing properties {sorted(missing)}")
            scas.append((i, props, _polygon_from_geometry(feat.get("geometry"), what)))
        else:
            raise BoundaryError(f"{what}: kind must be 'cb' or 'sca'")
    ids = [c.cb_id for c in cbs]
    if len(set(ids)) != len(ids):
        raise BoundaryError("duplicate CB ids")
    by_id = {c.cb_id: c for c in cbs}
    schedules = []
    for i, props, poly in scas:
        cb_id = str(props["cb_id"])
        if cb_id not in by_id:
            raise BoundaryError(f"SCA {props['id']}: unknown cb_id {cb_id}")
        try:
            sched = TreatmentSchedule(str(props["id"]), cb_id, poly, YearMonth.parse(props["submission"]),
                                      YearMonth.parse(props["operation"]))
        except ValueError as exc:
            raise BoundaryError(f"SCA {props['id']}: {exc}") from None
        v = poly.vertices()
        if not points_in_polygon(v[:, 0], v[:, 1], by_id[cb_id].boundary).all():
            log.warning("SCA %s is not within its declared CB %s", sched.sca_id, cb_id)
        if not by_id[cb_id].adopting:
            log.warning("SCA %s belongs to CB %s, which is declared non-adopting", sched.sca_id, cb_id)
        schedules.append(sched)
    if len({s.sca_id for s in schedules}) != len(schedules):
        raise BoundaryError("duplicate SCA ids")
    return Boundaries(cbs, schedules)


def polygon_feature(poly: Polygon, properties: dict) -> dict:
    return {"type": "Feature", "properties": properties,
            "geometry": {"type": "Polygon", "coordinates": poly.to_coords()}}


def boundaries_geojson(cbs: Iterable[CountyBorough], schedules: Iterable[TreatmentSchedule]) -> dict:
    feats = []
    for c in cbs:
        props = {"kind": "cb", "id": c.cb_id, "adoption": "adopting" if c.adopting else "non_adopting"}
        if c.population_1951 is not None:
            props["population_1951"] = c.population_1951
        props.update(c.attributes)
        feats.append(polygon_feature(c.boundary, props))
    for s in schedules:
        feats.append(polygon_feature(s.boundary, {"kind": "sca", "id": s.sca_id, "cb_id": s.cb_id,
                                                  "submission": str(s.submission),
                                                  "operation": str(s.operation)}))
    return {"type": "FeatureCollection", "features": feats}


# --------------------------------------------------------------------------
# writers


def _jsonable(x: Any):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, YearMonth):
        return str(x)
    return x


def dumps(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj: Any, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_geojson(doc: dict, path) -> Path:
    return write_json(doc, path)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance record written next to every run's outputs. It holds
    wall time, so it is the one output file that is not byte-stable."""

    command: str
    config: dict
    version: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    row_counts: dict[str, int] = field(default_factory=dict)
    wall_time_s: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "version": self.version,
                "input_digests": self.inputs, "output_digests": self.outputs,
                "row_counts": self.row_counts, "wall_time_s": self.wall_time_s, "warnings": self.warnings}

    def write(self, out_dir) -> Path:
        return write_json(self.to_dict(), Path(out_dir) / "manifest.json")
