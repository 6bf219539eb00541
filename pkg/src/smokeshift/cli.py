"""Command-line entry point.

    smokeshift <command> --config file.json [--seed N] [--threads N] [--out DIR]

Every command writes its results (JSON and CSV) plus ``manifest.json``
into the output folder. The log level comes from ``SMOKESHIFT_LOG`` if
set, else from the config. Exit status is 0 on success and 1 on any error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, diagnostics, frames, io, pipeline, staggered, synth
from .config import ConfigError, RunConfig
from .hdfe import DesignSpec, EstimateTable, estimate
from .plume import contour_downwind, plume_field
from .spatial import WindVector, polygon_area
from .timing import YearMonth

log = logging.getLogger("smokeshift")

COMMANDS = ("simulate", "assign", "plume", "event-study", "did", "gta", "diagnose-timing")


class _Collect(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


class Run:
    """Output folder bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig, out_dir: Path):
        self.command = command
        self.cfg = cfg
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: dict[str, str] = {}
        self.rows: dict[str, int] = {}
        self.inputs: dict[str, str] = {}

    def input(self, name: str, path: str | None) -> str | None:
        if path is not None:
            self.inputs[name] = io.file_digest(path)
        return path

    def csv(self, name: str, df: pd.DataFrame) -> None:
        io.write_csv(df, self.out / name)
        self.rows[name] = len(df)

    def json(self, name: str, obj) -> None:
        io.write_json(obj, self.out / name)

    def text(self, name: str, text: str) -> None:
        (self.out / name).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")

    def finish(self, wall: float, collected: list[str]) -> None:
        for p in sorted(self.out.iterdir()):
            if p.is_file() and p.name != "manifest.json":
                self.outputs[p.name] = io.file_digest(p)
        io.RunManifest(self.command, self.cfg.to_dict(), __version__, self.inputs, self.outputs, self.rows,
                       wall, collected).write(self.out)


# --------------------------------------------------------------------------
# shared loading


def _boundaries(run: Run) -> io.Boundaries:
    run.cfg.inputs.require("boundaries")
    return io.ingest_boundaries(run.input("boundaries", run.cfg.inputs.boundaries))


def _weather(run: Run, needed: bool) -> pd.DataFrame | None:
    path = run.cfg.inputs.weather
    if path is None:
        if needed:
            raise ConfigError("this configuration needs inputs.weather")
        return None
    return io.read_weather(run.input("weather", path))


def _downwind(run: Run, bounds: io.Boundaries, weather):
    method = run.cfg.downwind.method
    return pipeline.downwind_polygons(bounds, weather, method, run.cfg.plume.model, run.cfg.threads)


def _frame(run: Run, spec: DesignSpec | None = None) -> pd.DataFrame:
    cfg = run.cfg
    bounds = _boundaries(run)
    wants_dw = spec is not None and spec.treatment == "StaticDiDWithDownwind"
    if wants_dw and cfg.downwind.method == "none":
        raise ConfigError("StaticDiDWithDownwind needs downwind.method other than 'none'")
    weather = _weather(run, needed=wants_dw)
    dw = _downwind(run, bounds, weather) if wants_dw else None
    if cfg.data.unit_level == "station":
        cfg.inputs.require("panel")
        panel = io.ingest_panel(run.input("panel", cfg.inputs.panel))
        return pipeline.station_frame(panel, bounds, cfg.data.pollutant, dw)
    cfg.inputs.require("individuals")
    people = io.read_individuals(run.input("individuals", cfg.inputs.individuals))
    return pipeline.individual_frame(people, bounds, dw, weather)


def _spec_for(frame: pd.DataFrame, spec: DesignSpec) -> DesignSpec:
    # default individual covariates are optional when the file lacks them
    if spec.covariates:
        absent = [c for c in spec.covariates if c not in frame.columns]
        if absent and set(absent) <= {"weather_temp", "weather_wind"}:
            log.warning("weather covariates %s not available; dropped from the design", absent)
            spec = replace(spec, covariates=[c for c in spec.covariates if c not in absent])
    return spec


def _fit(frame: pd.DataFrame, spec: DesignSpec, split_by: str | None) -> dict[str, EstimateTable]:
    spec = _spec_for(frame, spec)
    if split_by is None:
        return {"all": estimate(frame, spec)}
    if split_by not in frame.columns:
        raise ConfigError(f"split_by column {split_by!r} not in data")
    out = {}
    for k, g in pipeline.split_sample(frame, split_by).items():
        # covariates fixed by the split (male within a sex split) carry no information
        flat = [c for c in spec.covariates if g[c].nunique(dropna=True) <= 1]
        if flat:
            log.info("sample %s: constant covariates %s left out", k, flat)
        out[k] = estimate(g, replace(spec, covariates=[c for c in spec.covariates if c not in flat]))
    return out


def _write_tables(run: Run, tables: dict[str, EstimateTable], spec: DesignSpec) -> None:
    single = list(tables) == ["all"]
    run.json("estimates.json", {"design": spec.to_dict(),
                                "samples": {k: t.to_dict() for k, t in tables.items()}})
    parts = []
    for k, t in tables.items():
        f = t.to_frame()
        if not single:
            f.insert(0, "sample", k)
        parts.append(f)
    run.csv("estimates.csv", pd.concat(parts, ignore_index=True))
    run.text("estimates.txt", "\n\n".join(f"[{k}]\n{t.to_text()}" for k, t in tables.items()))


# --------------------------------------------------------------------------
# commands


def cmd_simulate(run: Run) -> None:
    block = run.cfg.simulate
    cfg = replace(block.model, seed=run.cfg.seed)
    world = synth.simulate(cfg, individuals=block.individuals)
    run.csv("panel.csv", world.panel)
    io.write_geojson(io.boundaries_geojson(world.rollout.cbs, world.rollout.schedules),
                     run.out / "boundaries.geojson")
    run.csv("weather.csv", world.weather)
    run.csv("stations.csv", world.rollout.assignments)
    if world.individuals is not None:
        run.csv("individuals.csv", world.individuals)
    run.json("truth.json", {"effects": world.truth.to_dict(), "sim_config": cfg.to_dict()})


def cmd_assign(run: Run) -> None:
    cfg = run.cfg
    bounds = _boundaries(run)
    weather = _weather(run, needed=cfg.downwind.method != "none")
    dw = _downwind(run, bounds, weather)
    parts = []
    if cfg.inputs.panel is not None:
        panel = io.ingest_panel(run.input("panel", cfg.inputs.panel))
        parts.append(pipeline.assign(panel, "station_id", bounds, dw).assign(unit_type="station"))
    if cfg.inputs.individuals is not None:
        people = io.read_individuals(run.input("individuals", cfg.inputs.individuals))
        parts.append(pipeline.assign(people, "person_id", bounds, dw).assign(unit_type="person"))
    if not parts:
        raise ConfigError("assign needs inputs.panel and/or inputs.individuals")
    a = pd.concat(parts, ignore_index=True)
    run.csv("assignments.csv", a)
    summary = a.groupby(["unit_type", "control_class"]).size().rename("n").reset_index()
    summary["n_downwind"] = a.assign(dw=a["downwind_of"] != "").groupby(
        ["unit_type", "control_class"])["dw"].sum().to_numpy()
    run.csv("assignment_summary.csv", summary)
    if dw:
        feats = [io.polygon_feature(p, {"sca_id": k, "method": cfg.downwind.method}) for k, p in sorted(dw.items())]
        io.write_geojson({"type": "FeatureCollection", "features": feats}, run.out / "downwind.geojson")


def cmd_plume(run: Run) -> None:
    cfg = run.cfg
    bounds = _boundaries(run)
    block = cfg.plume
    weather = _weather(run, needed=block.wind is None)
    winds = ({s.sca_id: WindVector(*block.wind) for s in bounds.schedules} if block.wind is not None
             else pipeline.sca_winds(bounds, weather))
    chosen = [s for s in bounds.schedules if block.sca_ids is None or s.sca_id in block.sca_ids]
    if block.sca_ids is not None:
        unknown = set(block.sca_ids) - {s.sca_id for s in chosen}
        if unknown:
            raise ConfigError(f"unknown SCA ids: {sorted(unknown)}")
    feats, summary = [], []
    for s in chosen:
        cb = bounds.cb(s.cb_id)
        pop = cb.population_1951 if cb.population_1951 is not None else 1.0
        field = plume_field(s, winds[s.sca_id], block.model, cb_area=polygon_area(cb.boundary), cb_pop=pop,
                            threads=cfg.threads)
        contour = contour_downwind(field, s.boundary, block.model)
        feats.append(io.polygon_feature(contour, {"sca_id": s.sca_id, **field.meta}))
        summary.append({"sca_id": s.sca_id, "u_east": winds[s.sca_id][0], "v_north": winds[s.sca_id][1],
                        "contour_area_m2": polygon_area(contour), "field_max": float(field.values.max()),
                        **field.meta})
        if block.write_field:
            gx, gy = field.cell_centres()
            run.csv(f"field_{s.sca_id}.csv", pd.DataFrame({"x": gx.ravel(), "y": gy.ravel(),
                                                           "value": field.values.ravel()}))
    io.write_geojson({"type": "FeatureCollection", "features": feats}, run.out / "plume_contours.geojson")
    run.csv("plume_summary.csv", pd.DataFrame(summary))


def _coefficient_file(table: EstimateTable, spec: DesignSpec) -> pd.DataFrame:
    f = table.to_frame()
    f = f[f["term"].str.startswith("tau")]
    taus = f["term"].str.slice(3).astype(int)
    out = pd.DataFrame({"tau": taus.to_numpy(), "coef": f["coef"].to_numpy(),
                        "ci_lo": f["ci_lo"].to_numpy(), "ci_hi": f["ci_hi"].to_numpy()})
    ref = pd.DataFrame({"tau": [spec.reference], "coef": [0.0], "ci_lo": [0.0], "ci_hi": [0.0]})
    return pd.concat([out, ref], ignore_index=True).sort_values("tau", kind="stable").reset_index(drop=True)


def cmd_event_study(run: Run, bin_width: int | None = None) -> None:
    spec = run.cfg.design_spec()
    spec = replace(spec, treatment="EventStudy", bin_width=bin_width or spec.bin_width)
    frame = _frame(run, spec)
    tables = _fit(frame, spec, run.cfg.data.split_by)
    _write_tables(run, tables, spec)
    for k, t in tables.items():
        name = "coefficients.csv" if k == "all" else f"coefficients_{k}.csv"
        run.csv(name, _coefficient_file(t, spec))


def cmd_did(run: Run) -> None:
    spec = run.cfg.design_spec()
    if spec.treatment == "EventStudy":
        spec = replace(spec, treatment="StaticDiD")
    frame = _frame(run, spec)
    _write_tables(run, _fit(frame, spec, run.cfg.data.split_by), spec)


def cmd_gta(run: Run) -> None:
    cfg = run.cfg
    frame = _frame(run)
    outcome = cfg.gta.outcome or cfg.design_spec().outcome
    if cfg.data.unit_level != "station":
        raise ConfigError("gta needs a unit panel; use unit_level 'station'")
    panel = frames.gta_panel(frame, outcome)
    res = staggered.estimate_gta(panel, cfg.gta.control, cfg.gta.include_pre, cfg.gta.window, cfg.gta.reps,
                                 cfg.seed, cfg.threads)
    surf = res.surface_frame()
    surf.insert(0, "g_ym", [str(YearMonth.from_index(g)) for g in surf["g"]])
    surf.insert(2, "t_ym", [str(YearMonth.from_index(t)) for t in surf["t"]])
    run.csv("gta_cells.csv", surf)
    run.csv("gta_dynamic.csv", res.dynamic_frame())
    o = res.overall
    run.json("gta_overall.json", {"estimate": o.estimate, "se": o.se, "ci95": list(o.ci95),
                                  "n_cells": len(res.cells), "reps": res.reps, "seed": res.seed,
                                  "control": cfg.gta.control, "dynamic_sup_t_crit": res.dynamic_crit})


def cmd_diagnose_timing(run: Run) -> None:
    cfg = run.cfg
    t = cfg.timing
    bounds = _boundaries(run)
    station = None
    if cfg.inputs.panel is not None:
        panel = io.ingest_panel(run.input("panel", cfg.inputs.panel))
        station = pipeline.station_frame(panel, bounds, cfg.data.pollutant)
    chars = diagnostics.cb_characteristics(bounds, station, YearMonth.parse(t.pre_period_end),
                                           coverage=t.coverage, base=YearMonth.parse(t.base))
    if t.date != "operation":
        chars["timing"] = diagnostics.timing_index(bounds, t.coverage, YearMonth.parse(t.base), t.date)["timing"]
    run.csv("timing.csv", chars)
    regs = diagnostics.timing_regressions(chars)
    out = {"timing_regressions": {k: v.to_dict() for k, v in regs.items()}}
    text = [f"[timing ~ {k}]\n{v.to_text()}" for k, v in regs.items()]
    if station is not None:
        sel = diagnostics.selection_regression(station, YearMonth.parse(t.pre_period_end))
        out["selection"] = sel.to_dict()
        text.append(f"[pre-treatment level ~ ever inside | CB]\n{sel.to_text()}")
    run.json("timing_regressions.json", out)
    run.text("timing.txt", "\n\n".join(text))


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smokeshift", description="SCA rollout analysis toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="output folder (default: config output_dir)")
    p.add_argument("--bin-width", type=int, choices=(1, 6), default=None, help="event-study bin width (months)")
    return p


def _setup_logging(level: str) -> _Collect:
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_smokeshift", False):
            root.removeHandler(h)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    collect = _Collect()
    for h in (stream, collect):
        h._smokeshift = True
        root.addHandler(h)
    root.setLevel(min(getattr(logging, level), logging.WARNING))
    stream.setLevel(getattr(logging, level))
    logging.captureWarnings(True)
    return collect


def run_command(command: str, cfg: RunConfig, out_dir: Path, bin_width: int | None = None) -> Run:
    run = Run(command, cfg, out_dir)
    np.seterr(all="ignore")
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        if command == "simulate":
            cmd_simulate(run)
        elif command == "assign":
            cmd_assign(run)
        elif command == "plume":
            cmd_plume(run)
        elif command == "event-study":
            cmd_event_study(run, bin_width)
        elif command == "did":
            cmd_did(run)
        elif command == "gta":
            cmd_gta(run)
        elif command == "diagnose-timing":
            cmd_diagnose_timing(run)
        else:
            raise ConfigError(f"unknown command {command}")
    return run


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    collect = _setup_logging("WARNING")
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg.threads = args.threads
        level = os.environ.get("SMOKESHIFT_LOG", cfg.log_level).upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError(f"SMOKESHIFT_LOG must be DEBUG, INFO, WARNING or ERROR, got {level}")
        collect = _setup_logging(level)
        out = Path(args.out) if args.out else Path(cfg.base_dir) / cfg.output_dir
        t0 = time.perf_counter()
        run = run_command(args.command, cfg, out, args.bin_width)
        run.finish(time.perf_counter() - t0, collect.messages)
    except (ValueError, KeyError, OSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"smokeshift {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
