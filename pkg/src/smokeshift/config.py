"""Run configuration for the command line: one JSON document with global
settings plus optional per-command blocks. Unknown keys are rejected at
every level; relative paths resolve against the config file's folder."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .hdfe import DesignSpec
from .pipeline import DOWNWIND_METHODS
from .plume import PlumeConfig
from .synth import SimConfig
from .timing import YearMonth

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class ConfigError(ValueError):
    pass


def _strict(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class Inputs:
    panel: str | None = None
    boundaries: str | None = None
    weather: str | None = None
    individuals: str | None = None

    def resolve(self, base: Path) -> "Inputs":
        def r(p):
            return None if p is None else str((base / p).resolve()) if not Path(p).is_absolute() else p

        return Inputs(r(self.panel), r(self.boundaries), r(self.weather), r(self.individuals))

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"this command needs inputs: {missing}")


@dataclass
class DataBlock:
    unit_level: str = "station"  # or "individual"
    pollutant: str = "BlackSmoke"
    split_by: str | None = None  # run the design separately per value (e.g. "sex")

    def __post_init__(self):
        if self.unit_level not in ("station", "individual"):
            raise ValueError("unit_level must be 'station' or 'individual'")


@dataclass
class DownwindBlock:
    method: str = "none"

    def __post_init__(self):
        if self.method not in DOWNWIND_METHODS:
            raise ValueError(f"method must be one of {DOWNWIND_METHODS}")


@dataclass
class PlumeBlock:
    sca_ids: list[str] | None = None
    wind: list[float] | None = None  # fixed (u_east, v_north) instead of the 24-month mean
    write_field: bool = True
    model: PlumeConfig = field(default_factory=PlumeConfig)


@dataclass
class GTABlock:
    outcome: str | None = None
    control: str = "never"
    include_pre: bool = True
    window: int | None = 60
    reps: int = 999

    def __post_init__(self):
        if self.control not in ("never", "not_yet"):
            raise ValueError("control must be 'never' or 'not_yet'")


@dataclass
class TimingBlock:
    coverage: float = 0.10
    base: str = "1950-01"
    date: str = "operation"
    pre_period_end: str = "1955-12"

    def __post_init__(self):
        YearMonth.parse(self.base)
        YearMonth.parse(self.pre_period_end)


@dataclass
class SimulateBlock:
    individuals: bool = True
    model: SimConfig = field(default_factory=SimConfig)


def default_design(unit_level: str) -> dict:
    if unit_level == "station":
        return {"outcome": "concentration", "fixed_effects": ["unit", "t"], "cluster_dim": "unit",
                "trend_mode": "UnitSpecific", "trend_unit": "unit"}
    return {"outcome": "birth_weight", "fixed_effects": ["area", "t"], "cluster_dim": "cb_id",
            "trend_mode": "UnitSpecific", "trend_unit": "area",
            "covariates": ["male", "weather_temp", "weather_wind"]}


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"
    log_level: str = "WARNING"
    inputs: Inputs = field(default_factory=Inputs)
    data: DataBlock = field(default_factory=DataBlock)
    design: dict = field(default_factory=dict)  # overrides on top of default_design()
    downwind: DownwindBlock = field(default_factory=DownwindBlock)
    plume: PlumeBlock = field(default_factory=PlumeBlock)
    gta: GTABlock = field(default_factory=GTABlock)
    timing: TimingBlock = field(default_factory=TimingBlock)
    simulate: SimulateBlock = field(default_factory=SimulateBlock)
    base_dir: str = field(default=".", repr=False)

    def design_spec(self) -> DesignSpec:
        d = default_design(self.data.unit_level)
        d.update(self.design)
        try:
            return DesignSpec.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"design: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "RunConfig":
        d = dict(d)
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        blocks = {"inputs": Inputs, "data": DataBlock, "downwind": DownwindBlock, "gta": GTABlock,
                  "timing": TimingBlock}
        for k, c in blocks.items():
            if k in d:
                d[k] = _strict(c, d[k], k)
        if "plume" in d:
            p = dict(d["plume"]) if isinstance(d["plume"], dict) else d["plume"]
            extra = {k: p.pop(k) for k in ("sca_ids", "wind", "write_field") if isinstance(p, dict) and k in p}
            d["plume"] = PlumeBlock(model=_strict(PlumeConfig, p, "plume"), **extra)
        if "simulate" in d:
            s = dict(d["simulate"]) if isinstance(d["simulate"], dict) else d["simulate"]
            if not isinstance(s, dict):
                raise ConfigError("simulate must be a JSON object")
            ind = s.pop("individuals", True)
            try:
                d["simulate"] = SimulateBlock(bool(ind), SimConfig.from_dict(s))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"simulate: {exc}") from None
        if "design" in d and not isinstance(d["design"], dict):
            raise ConfigError("design must be a JSON object")
        d.pop("base_dir", None)
        cfg = _strict(cls, d, "config")
        cfg.base_dir = str(Path(base_dir).resolve())
        cfg.inputs = cfg.inputs.resolve(Path(cfg.base_dir))
        if cfg.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {LOG_LEVELS}")
        if cfg.threads < 1:
            raise ConfigError("threads must be at least 1")
        cfg.design_spec()  # validate early
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        """Full configuration with every default filled in."""
        d = asdict(self)
        d["simulate"] = {"individuals": self.simulate.individuals, **self.simulate.model.to_dict()}
        d["plume"] = {"sca_ids": self.plume.sca_ids, "wind": self.plume.wind,
                      "write_field": self.plume.write_field, **asdict(self.plume.model)}
        d["design"] = self.design_spec().to_dict()
        d.pop("base_dir")
        return d
