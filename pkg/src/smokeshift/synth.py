"""Synthetic staggered-rollout data with known effects.

County boroughs are squares on a grid; adopting boroughs get up to three
square SCAs in their south-west, south-east and north-west quadrants, and
the north-east quadrant stays untreated. Every random draw comes from a
stream keyed on (seed, purpose, borough), so per-borough generation is
order independent.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd

from . import frames
from .spatial import CountyBorough, Point, Polygon, assign_units
from .timing import TreatmentSchedule, YearMonth, phase_indicators

_ROLLOUT, _GEOM, _PANEL, _PEOPLE, _WEATHER, _GENO = range(6)

OUTCOME_UNITS = {"birth_weight": 1e-3, "height": 1.0, "years_education": 1.0, "fluid_intelligence": 1.0}
# grams -> kg for birth weight; everything else is in its own units


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, keys)])


def _strict(cls, d):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class GroundTruth:
    beta_adj: float = -8.0
    beta_post: float = -19.0
    effect_bw: float = 60.0  # grams
    effect_height: float = 1.0  # cm
    effect_edu: float = 0.0  # years
    effect_fi: float = 0.0  # z
    pgs_interaction: dict[str, float] = field(default_factory=dict)
    sex_interaction: float = 0.0  # grams, added for males
    ses_interaction: dict[str, float] = field(default_factory=dict)

    def effect(self, outcome: str) -> float:
        return {"birth_weight": self.effect_bw, "height": self.effect_height,
                "years_education": self.effect_edu, "fluid_intelligence": self.effect_fi}[outcome]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WeatherModel:
    prevailing_u: float = 3.0
    prevailing_v: float = 1.0
    seasonal_amplitude: float = 0.0
    wind_noise_sd: float = 1.0
    temperature_mean: float = 9.5
    temperature_amplitude: float = 6.0
    temperature_noise_sd: float = 1.0


@dataclass
class SimConfig:
    seed: int = 0
    n_cbs: int = 20
    n_stations_per_cb: int = 3
    n_individuals_per_cb: int = 300
    share_adopting: float = 0.6
    scas_per_cb: int = 2
    submission_window: tuple[YearMonth, YearMonth] = (YearMonth(1957, 1), YearMonth(1962, 12))
    adjustment_gap_months: int | tuple[int, int] = 16
    submission_step_months: int = 1  # >1 puts submissions on a coarse lattice (bigger cohorts)
    density_timing: float = 0.0  # in [0, 1]; weight on "denser boroughs submit earlier"
    inside_level_gap: float = 0.0  # permanent black smoke shift for stations inside SCAs
    panel_window: tuple[YearMonth, YearMonth] = (YearMonth(1952, 1), YearMonth(1969, 12))
    cohort_window: tuple[YearMonth, YearMonth] = (YearMonth(1952, 1), YearMonth(1969, 12))
    weather_window: tuple[YearMonth, YearMonth] = (YearMonth(1948, 1), YearMonth(1972, 12))
    effects: GroundTruth = field(default_factory=GroundTruth)
    seasonal_amplitude: float = 15.0
    station_trend_sd: float = 0.5  # mcg/m3 per year
    noise_sd: float = 10.0
    common_trend: float = -2.0  # mcg/m3 per year
    station_level_mean: float = 160.0
    station_level_sd: float = 15.0
    so2_level_mean: float = 120.0
    area_trend_sd: float = 0.1  # outcome sd per decade, individuals
    outcome_noise_scale: float = 1.0
    missing_rate: dict[str, float] = field(default_factory=dict)
    pgs_main_effect: float = 0.2  # outcome sd per PGS sd
    n_snps: int = 200
    n_pcs: int = 4
    cb_size_m: float = 5000.0
    weather_model: WeatherModel = field(default_factory=WeatherModel)

    def __post_init__(self):
        if min(self.n_cbs, self.n_stations_per_cb, self.n_individuals_per_cb) <= 0:
            raise ValueError("counts must be positive")
        if not 0 < self.share_adopting <= 1:
            raise ValueError("share_adopting must lie in (0, 1]")
        if not 1 <= self.scas_per_cb <= 3:
            raise ValueError("scas_per_cb must be 1, 2 or 3")
        gap = self.adjustment_gap_months
        lo = gap[0] if isinstance(gap, (tuple, list)) else gap
        if lo < 0:
            raise ValueError("adjustment gap must be non-negative")
        if not 0 <= self.density_timing <= 1:
            raise ValueError("density_timing must lie in [0, 1]")
        if self.submission_step_months < 1:
            raise ValueError("submission_step_months must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for k in ("submission_window", "panel_window", "cohort_window", "weather_window"):
            if k in d:
                d[k] = tuple(YearMonth.parse(x) if isinstance(x, str) else x for x in d[k])
        if isinstance(d.get("effects"), dict):
            d["effects"] = _strict(GroundTruth, d["effects"])
        if isinstance(d.get("weather_model"), dict):
            d["weather_model"] = _strict(WeatherModel, d["weather_model"])
        if isinstance(d.get("adjustment_gap_months"), list):
            d["adjustment_gap_months"] = tuple(d["adjustment_gap_months"])
        return _strict(cls, d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("submission_window", "panel_window", "cohort_window", "weather_window"):
            d[k] = [str(x) for x in getattr(self, k)]
        return d


@dataclass
class Rollout:
    cbs: list[CountyBorough]
    schedules: list[TreatmentSchedule]
    stations: pd.DataFrame
    assignments: pd.DataFrame


def _cb_origin(k: int, cfg: SimConfig) -> tuple[float, float]:
    ncol = math.ceil(math.sqrt(cfg.n_cbs))
    return (k % ncol) * cfg.cb_size_m, (k // ncol) * cfg.cb_size_m


def _quadrant_box(x0, y0, s, q):
    # SW, SE, NW, NE; each SCA is 0.4 s wide with a 0.05 s margin
    qx, qy = q % 2, q // 2
    a = x0 + qx * s / 2 + 0.05 * s
    b = y0 + qy * s / 2 + 0.05 * s
    return a, b, a + 0.4 * s, b + 0.4 * s


def _uniform_in_box(rng, box, n):
    a, b, c, d = box
    return np.column_stack([rng.uniform(a, c, n), rng.uniform(b, d, n)])


def generate_rollout(cfg: SimConfig) -> Rollout:
    """Boroughs, SCAs with their dates, monitoring stations and their
    assignments. ``floor(share_adopting * n_cbs)`` boroughs adopt."""
    rng = _rng(cfg.seed, _ROLLOUT)
    n_adopt = int(math.floor(cfg.share_adopting * cfg.n_cbs))
    adopting = set(rng.permutation(cfg.n_cbs)[:n_adopt].tolist())
    s = cfg.cb_size_m
    lo, hi = cfg.submission_window[0].index, cfg.submission_window[1].index
    gap = cfg.adjustment_gap_months

    cbs, schedules, st_rows = [], [], []
    for k in range(cfg.n_cbs):
        g = _rng(cfg.seed, _GEOM, k)
        x0, y0 = _cb_origin(k, cfg)
        pop = float(g.integers(50_000, 500_000))
        ses_share = float(g.uniform(0.1, 0.4))
        cb_id = f"CB{k:03d}"
        cbs.append(CountyBorough(cb_id, Polygon.box(x0, y0, x0 + s, y0 + s), k in adopting, pop,
                                 {"ses_share": ses_share, "density": pop / (s * s / 1e6)}))
        n_sca = cfg.scas_per_cb if k in adopting else 0
        for j in range(n_sca):
            step = cfg.submission_step_months
            slots = (hi - lo) // step + 1
            # dense boroughs pull towards the start of the window
            frac = (1 - cfg.density_timing) * g.random() + cfg.density_timing * (500_000 - pop) / 450_000
            sub = lo + step * min(int(frac * slots), slots - 1)
            gp = int(g.integers(gap[0], gap[1] + 1)) if isinstance(gap, tuple) else int(gap)
            schedules.append(TreatmentSchedule(
                f"{cb_id}-S{j}", cb_id, Polygon.box(*_quadrant_box(x0, y0, s, j)),
                YearMonth.from_index(sub), YearMonth.from_index(sub + gp)))
        for i in range(cfg.n_stations_per_cb):
            # all but the last station go inside an SCA (round robin); the last
            # sits in the untreated NE quadrant unless every quadrant slot is used
            inside = n_sca and (i < n_sca or i < cfg.n_stations_per_cb - 1)
            q = i % n_sca if inside else 3
            if k not in adopting:
                box = (x0 + 0.02 * s, y0 + 0.02 * s, x0 + 0.98 * s, y0 + 0.98 * s)
            else:
                box = _quadrant_box(x0, y0, s, q)
            (px, py), = _uniform_in_box(g, box, 1)
            st_rows.append((f"ST{k:03d}-{i}", cb_id, float(px), float(py)))
    # low SES: below-median professional share
    med = np.median([c.attributes["ses_share"] for c in cbs])
    for c in cbs:
        c.attributes["low_ses"] = bool(c.attributes["ses_share"] < med)
    stations = pd.DataFrame(st_rows, columns=["station_id", "cb_id", "easting_m", "northing_m"])
    assigned = assign_units(
        [(r.station_id, Point(r.easting_m, r.northing_m)) for r in stations.itertuples()], cbs, schedules
    )
    return Rollout(cbs, schedules, stations, frames.assignments_frame(assigned))


def _months(window: tuple[YearMonth, YearMonth]) -> np.ndarray:
    return np.arange(window[0].index, window[1].index + 1)


def _common_shocks(cfg: SimConfig, key: int, months: np.ndarray, sd: float) -> np.ndarray:
    return _rng(cfg.seed, key, 10**6).normal(0, sd, len(months))


def generate_panel(cfg: SimConfig, rollout: Rollout) -> tuple[pd.DataFrame, GroundTruth]:
    """Monthly black smoke and SO2 for every station.

    Black smoke = station level + seasonal sine + common trend and shocks +
    station trend + beta_adj Inside Adj + beta_post Inside Post + noise.
    SO2 has the same structure and no treatment effect.
    """
    months = _months(cfg.panel_window)
    T = len(months)
    years = (months - months[0]) / 12.0
    season = cfg.seasonal_amplitude * np.sin(2 * np.pi * (months % 12) / 12)
    shock = _common_shocks(cfg, _PANEL, months, 3.0)
    fr = frames.unit_treatment(rollout.stations["station_id"], rollout.assignments, rollout.schedules)
    eff = cfg.effects
    parts = []
    for row, st in zip(fr.itertuples(), rollout.stations.itertuples()):
        k = int(st.cb_id[2:])
        i = int(st.station_id.split("-")[1])
        g = _rng(cfg.seed, _PANEL, k, i)
        adj, post = phase_indicators(months, np.full(T, row.event), np.full(T, row.operation))
        for pollutant, level, effect in (
            ("BlackSmoke", cfg.station_level_mean, True),
            ("SO2", cfg.so2_level_mean, False),
        ):
            base = g.normal(level, cfg.station_level_sd)
            slope = g.normal(0, cfg.station_trend_sd)
            y = base + season + cfg.common_trend * years + shock + slope * years
            if effect and row.inside > 0:
                y = y + cfg.inside_level_gap + eff.beta_adj * adj + eff.beta_post * post
            y = y + g.normal(0, cfg.noise_sd, T)
            parts.append(pd.DataFrame({
                "station_id": st.station_id, "cb_id": st.cb_id, "easting_m": st.easting_m,
                "northing_m": st.northing_m, "year": months // 12, "month": months % 12 + 1,
                "pollutant": pollutant, "concentration": np.maximum(y, 0.0),
            }))
    return pd.concat(parts, ignore_index=True), eff


def generate_weather(cfg: SimConfig, rollout: Rollout | None = None) -> pd.DataFrame:
    """Monthly wind components and temperature per borough."""
    wm = cfg.weather_model
    months = _months(cfg.weather_window)
    phase = 2 * np.pi * (months % 12) / 12
    parts = []
    for k in range(cfg.n_cbs):
        g = _rng(cfg.seed, _WEATHER, k)
        u = wm.prevailing_u + wm.seasonal_amplitude * np.cos(phase) + g.normal(0, wm.wind_noise_sd, len(months))
        v = wm.prevailing_v + wm.seasonal_amplitude * np.sin(phase) + g.normal(0, wm.wind_noise_sd, len(months))
        temp = (wm.temperature_mean - wm.temperature_amplitude * np.cos(phase)
                + g.normal(0, wm.temperature_noise_sd, len(months)))
        parts.append(pd.DataFrame({"cb_id": f"CB{k:03d}", "year": months // 12, "month": months % 12 + 1,
                                   "u_east": u, "v_north": v, "temperature": temp}))
    return pd.concat(parts, ignore_index=True)


@dataclass
class GenotypeMatrix:
    counts: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.weights = np.asarray(self.weights, dtype=float)
        if not np.isin(self.counts, (0, 1, 2)).all():
            raise ValueError("minor allele counts must be 0, 1 or 2")
        if self.counts.shape[1] != len(self.weights):
            raise ValueError("one weight per SNP required")


def aggregate_polygenic_score(geno: GenotypeMatrix) -> np.ndarray:
    """Weighted allele-count sum, standardised with the population sd."""
    if not np.isfinite(geno.weights).all():
        raise ValueError("SNP weights must be finite")
    raw = geno.counts.astype(float) @ geno.weights
    sd = raw.std()
    if not sd > 0:
        raise ValueError("polygenic score has zero variance in this sample")
    z = (raw - raw.mean()) / sd
    # second pass removes the rounding left by the first
    return (z - z.mean()) / z.std()


# outcome baselines: mean, sd, male shift
_OUTCOME_BASE = {
    "birth_weight": (3.35, 0.5, 0.12),
    "height": (162.0, 6.5, 13.5),
    "years_education": (14.0, 3.0, 0.0),
    "fluid_intelligence": (0.0, 1.0, 0.05),
}


def person_assignments(people: pd.DataFrame, rollout: Rollout) -> pd.DataFrame:
    units = [(r.person_id, Point(r.easting_m, r.northing_m)) for r in people.itertuples()]
    return frames.assignments_frame(assign_units(units, rollout.cbs, rollout.schedules))


def generate_individuals(cfg: SimConfig, rollout: Rollout, weather: pd.DataFrame | None = None
                         ) -> tuple[pd.DataFrame, GroundTruth]:
    """One row per person, born uniformly inside a borough and over the
    cohort window. Effects switch on for people born inside an SCA and
    conceived at or after its operation date."""
    if weather is None:
        weather = generate_weather(cfg, rollout)
    lo, hi = cfg.cohort_window[0].index, cfg.cohort_window[1].index
    s = cfg.cb_size_m
    ethnic = np.array(["white", "asian", "black"])
    eth_shift = np.array([[0.0] * cfg.n_pcs, [1.5] + [0.3] * (cfg.n_pcs - 1), [-1.5] + [0.6] * (cfg.n_pcs - 1)])
    rows = []
    for k, cb in enumerate(rollout.cbs):
        g = _rng(cfg.seed, _PEOPLE, k)
        n = cfg.n_individuals_per_cb
        x0, y0 = _cb_origin(k, cfg)
        xy = _uniform_in_box(g, (x0, y0, x0 + s, y0 + s), n)
        birth = g.integers(lo, hi + 1, n)
        e = g.choice(3, size=n, p=[0.9, 0.06, 0.04])
        pcs = g.normal(0, 1, (n, cfg.n_pcs)) + eth_shift[e]
        rows.append(pd.DataFrame({
            "person_id": [f"P{k:03d}-{i:05d}" for i in range(n)],
            "cb_id": cb.cb_id,
            "easting_m": xy[:, 0], "northing_m": xy[:, 1],
            "birth_year": birth // 12, "birth_month": birth % 12 + 1,
            "sex": np.where(g.random(n) < 0.5, "M", "F"),
            "ethnicity": ethnic[e],
            **{f"pc{j + 1}": pcs[:, j] for j in range(cfg.n_pcs)},
            "low_ses_area": cb.attributes["low_ses"],
        }))
    people = pd.concat(rows, ignore_index=True)

    # genotypes: allele frequencies shared, counts drawn per borough stream
    maf = _rng(cfg.seed, _GENO, 10**6).uniform(0.05, 0.5, cfg.n_snps)
    counts = np.vstack([
        _rng(cfg.seed, _GENO, k).binomial(2, maf, (cfg.n_individuals_per_cb, cfg.n_snps))
        for k in range(cfg.n_cbs)
    ])
    wrng = _rng(cfg.seed, _GENO, 10**6 + 1)
    for name in _OUTCOME_BASE:
        people[f"pgs_{name}"] = aggregate_polygenic_score(GenotypeMatrix(counts, wrng.normal(0, 1, cfg.n_snps)))

    fr = frames.individual_frame(people, person_assignments(people, rollout), rollout.schedules)
    people[["weather_temp", "weather_wind"]] = frames.weather_exposure(people, weather).to_numpy()

    eff = cfg.effects
    _, post = phase_indicators(fr["clock"], fr["event"], fr["operation"])
    treated_post = fr["inside"].to_numpy() * post
    male = (people["sex"] == "M").to_numpy(dtype=float)
    low_ses = people["low_ses_area"].to_numpy(dtype=float)
    t_dec = (people["birth_year"] * 12 + people["birth_month"] - 1 - lo).to_numpy() / 120.0
    months = np.arange(lo, hi + 1)
    area = fr["area"].to_numpy()
    area_codes, area_uniq = pd.factorize(area, sort=True)
    for j, (name, (mean, sd, male_shift)) in enumerate(_OUTCOME_BASE.items()):
        g = _rng(cfg.seed, _PEOPLE, 10**6 + j)
        area_level = g.normal(0, 0.1 * sd, len(area_uniq))
        area_slope = g.normal(0, cfg.area_trend_sd * sd, len(area_uniq))
        cohort = g.normal(0, 0.05 * sd, len(months)) + 0.02 * sd * np.sin(2 * np.pi * (months % 12) / 12)
        unit = OUTCOME_UNITS[name]
        effect = (eff.effect(name) + eff.pgs_interaction.get(name, 0.0) * people[f"pgs_{name}"].to_numpy()
                  + eff.ses_interaction.get(name, 0.0) * low_ses)
        if name == "birth_weight":
            effect = effect + eff.sex_interaction * male
        y = (mean + male_shift * male + area_level[area_codes] + area_slope[area_codes] * t_dec
             + cohort[(people["birth_year"] * 12 + people["birth_month"] - 1 - lo).to_numpy()]
             + cfg.pgs_main_effect * sd * people[f"pgs_{name}"].to_numpy()
             + 0.01 * sd * (people["weather_temp"].to_numpy() - 9.5)
             + unit * effect * treated_post
             + g.normal(0, sd * cfg.outcome_noise_scale, len(people)))
        rate = cfg.missing_rate.get(name, 0.0)
        if rate > 0:
            y = np.where(g.random(len(people)) < rate, np.nan, y)
        people[name] = y
    return people, eff


@dataclass
class SyntheticWorld:
    config: SimConfig
    rollout: Rollout
    panel: pd.DataFrame
    individuals: pd.DataFrame | None
    weather: pd.DataFrame
    truth: GroundTruth

    def station_frame(self, pollutant: str = "BlackSmoke") -> pd.DataFrame:
        return frames.station_frame(self.panel, self.rollout.assignments, self.rollout.schedules, pollutant)

    def individual_frame(self) -> pd.DataFrame:
        if self.individuals is None:
            raise ValueError("world was simulated without individuals")
        a = person_assignments(self.individuals, self.rollout)
        return frames.individual_frame(self.individuals, a, self.rollout.schedules)


def simulate(cfg: SimConfig, individuals: bool = True) -> SyntheticWorld:
    rollout = generate_rollout(cfg)
    panel, truth = generate_panel(cfg, rollout)
    weather = generate_weather(cfg, rollout)
    people = generate_individuals(cfg, rollout, weather)[0] if individuals else None
    return SyntheticWorld(cfg, rollout, panel, people, weather, truth)
