"""Group-time average treatment effects with never-treated comparisons.

Each cell ATT(g, t) is an unconditional 2x2 difference in differences
against base period g - 1. Aggregations are linear in the cells, so the
per-unit influence functions carry through and the multiplier bootstrap
perturbs them with unit-level Mammen weights.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

Z95 = 1.959963984540054
_SQ5 = math.sqrt(5.0)
MAMMEN_LO = (1 - _SQ5) / 2
MAMMEN_HI = (1 + _SQ5) / 2
MAMMEN_P_LO = (_SQ5 + 1) / (2 * _SQ5)


class MissingCell(ValueError):
    pass


@dataclass
class GroupTimeATT:
    """One cell. ``g`` and ``t`` are integer periods (month indices in the
    station and individual frames)."""

    g: int
    t: int
    att: float
    se: float
    n_treated: int
    n_control: int
    influence: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def event_time(self) -> int:
        return self.t - self.g


@dataclass
class AggregatedATT:
    kind: str
    estimate: float
    se: float
    ci95: tuple[float, float]
    event_time: int | None = None
    weights: dict = field(default_factory=dict, repr=False)
    influence: np.ndarray | None = field(default=None, repr=False, compare=False)


class WidePanel:
    """Units x periods outcome matrix with each unit's group."""

    def __init__(self, panel: pd.DataFrame, unit="unit", time="t", y="y", group="g"):
        if panel.duplicated([unit, time]).any():
            raise ValueError("panel has duplicate (unit, time) rows")
        wide = panel.pivot(index=unit, columns=time, values=y).sort_index().sort_index(axis=1)
        groups = panel.groupby(unit)[group].first().reindex(wide.index)
        if (panel.groupby(unit)[group].nunique(dropna=False) > 1).any():
            raise ValueError("group must be constant within unit")
        self.units = wide.index.to_numpy()
        self.periods = wide.columns.to_numpy().astype(np.int64)
        self.Y = wide.to_numpy(dtype=float)
        self.group = groups.to_numpy(dtype=float)
        self._col = {int(p): i for i, p in enumerate(self.periods)}

    def column(self, period: int) -> np.ndarray:
        i = self._col.get(int(period))
        if i is None:
            return np.full(len(self.units), np.nan)
        return self.Y[:, i]

    @property
    def groups(self) -> np.ndarray:
        g = self.group[~np.isnan(self.group)]
        return np.unique(g).astype(np.int64)


def _as_wide(panel) -> WidePanel:
    return panel if isinstance(panel, WidePanel) else WidePanel(panel)


def att_gt(panel, g: int, t: int, control: str = "never") -> GroupTimeATT:
    """ATT(g, t) from the panel (``unit``, ``t``, ``y``, ``g`` columns, with
    ``g`` NaN for never-treated units) or a prepared :class:`WidePanel`.

    ``control="not_yet"`` also admits units first treated after both t and
    g - 1.
    """
    wp = _as_wide(panel)
    base = g - 1
    delta = wp.column(t) - wp.column(base)
    ok = np.isfinite(delta)
    treated = ok & (wp.group == g)
    if control == "never":
        ctrl = ok & np.isnan(wp.group)
    elif control == "not_yet":
        with np.errstate(invalid="ignore"):
            later = wp.group > max(t, base)
        ctrl = ok & (np.isnan(wp.group) | (later & (wp.group != g)))
    else:
        raise ValueError("control must be 'never' or 'not_yet'")
    n1, n0 = int(treated.sum()), int(ctrl.sum())
    if n1 == 0 or n0 == 0:
        raise MissingCell(f"ATT({g}, {t}): {n1} treated and {n0} comparison units observed")
    m1 = delta[treated].mean()
    m0 = delta[ctrl].mean()
    inf = np.zeros(len(wp.units))
    inf[treated] = (delta[treated] - m1) / n1
    inf[ctrl] = -(delta[ctrl] - m0) / n0
    return GroupTimeATT(int(g), int(t), float(m1 - m0), float(np.sqrt(np.sum(inf**2))), n1, n0, inf)


def att_surface(panel, control: str = "never", include_pre: bool = False,
                window: int | None = None) -> list[GroupTimeATT]:
    """All identifiable cells, skipping (with a log line) empty ones."""
    wp = _as_wide(panel)
    out = []
    for g in wp.groups:
        for t in wp.periods:
            if t == g - 1 or (t < g - 1 and not include_pre):
                continue
            if window is not None and abs(t - g) > window:
                continue
            try:
                out.append(att_gt(wp, int(g), int(t), control))
            except MissingCell as exc:
                log.debug("%s", exc)
    return out


def _group_sizes(atts) -> dict[int, int]:
    sizes: dict[int, int] = {}
    for a in atts:
        sizes[a.g] = max(sizes.get(a.g, 0), a.n_treated)
    return sizes


def _combine(kind, cells, w, event_time=None) -> AggregatedATT:
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    est = float(sum(wi * c.att for wi, c in zip(w, cells)))
    inf = None
    if all(c.influence is not None for c in cells):
        inf = sum(wi * c.influence for wi, c in zip(w, cells))
        se = float(np.sqrt(np.sum(inf**2)))
    else:
        se = math.nan
    weights = {(c.g, c.t): float(wi) for wi, c in zip(w, cells)}
    return AggregatedATT(kind, est, se, (est - Z95 * se, est + Z95 * se), event_time, weights, inf)


def aggregate_dynamic(atts: list[GroupTimeATT], event_time: int) -> AggregatedATT:
    """Group-size weighted average of ATT(g, g + e)."""
    cells = [a for a in atts if a.t - a.g == event_time]
    if not cells:
        raise ValueError(f"no group observed at event time {event_time}")
    return _combine("Dynamic", cells, [c.n_treated for c in cells], event_time)


def aggregate_overall(atts: list[GroupTimeATT]) -> AggregatedATT:
    """Average over post cells (t >= g): each group weighted by its size,
    spread evenly over that group's post periods."""
    post = [a for a in atts if a.t >= a.g]
    if not post:
        raise ValueError("no post-treatment cells to aggregate")
    sizes = _group_sizes(post)
    per_group = {g: sum(1 for a in post if a.g == g) for g in sizes}
    w = [sizes[a.g] / per_group[a.g] for a in post]
    return _combine("Overall", post, w)


@dataclass
class BootstrapResult:
    se: np.ndarray
    crit: float
    pointwise: np.ndarray  # (k, 2)
    band: np.ndarray  # (k, 2), simultaneous
    degenerate: list[int]
    reps: int
    seed: int


def mammen_weights(n: int, seed: int, rep: int) -> np.ndarray:
    rng = np.random.default_rng([int(seed), int(rep)])
    return np.where(rng.random(n) < MAMMEN_P_LO, MAMMEN_LO, MAMMEN_HI)


def multiplier_bootstrap(influence: np.ndarray, estimates: np.ndarray, reps: int = 999, seed: int = 0,
                         threads: int = 1) -> BootstrapResult:
    """Unit-cluster multiplier bootstrap.

    ``influence`` is (units x estimands); a replication perturbs the
    estimates by ``xi @ influence`` with Mammen weights ``xi`` drawn from a
    stream keyed on (seed, replication), so the thread count cannot change
    the draws. Returns bootstrap standard errors, pointwise 95% intervals
    and sup-t simultaneous bands.
    """
    if reps < 99:
        raise ValueError("need at least 99 bootstrap replications")
    influence = np.atleast_2d(np.asarray(influence, dtype=float))
    if influence.shape[0] == 1 and np.ndim(estimates) == 0:
        influence = influence.T
    est = np.atleast_1d(np.asarray(estimates, dtype=float))
    n, k = influence.shape

    def run(lo, hi):
        # one vector-matrix product per replication, so chunking (threads)
        # cannot change the floating-point reduction order
        return np.stack([mammen_weights(n, seed, r) @ influence for r in range(lo, hi)])

    edges = np.linspace(0, reps, max(1, threads) + 1).astype(int)
    chunks = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            draws = np.vstack(list(ex.map(lambda c: run(*c), chunks)))
    else:
        draws = np.vstack([run(*c) for c in chunks])
    se = draws.std(axis=0, ddof=1)
    degenerate = [int(j) for j in np.flatnonzero(~(se > 0))]
    if degenerate:
        log.warning("bootstrap variance is zero for estimands %s", degenerate)
    safe = np.where(se > 0, se, np.inf)
    tmax = np.max(np.abs(draws) / safe, axis=1)
    crit = float(np.quantile(tmax, 0.95)) if k > 0 else math.nan
    pointwise = np.column_stack([est - Z95 * se, est + Z95 * se])
    band = np.column_stack([est - crit * se, est + crit * se])
    return BootstrapResult(se, crit, pointwise, band, degenerate, reps, seed)


@dataclass
class GTAResult:
    cells: list[GroupTimeATT]
    dynamic: list[AggregatedATT]
    overall: AggregatedATT
    dynamic_crit: float
    reps: int
    seed: int

    def surface_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"g": [c.g for c in self.cells], "t": [c.t for c in self.cells],
             "event_time": [c.event_time for c in self.cells], "att": [c.att for c in self.cells],
             "se": [c.se for c in self.cells], "n_treated": [c.n_treated for c in self.cells],
             "n_control": [c.n_control for c in self.cells]}
        )

    def dynamic_frame(self) -> pd.DataFrame:
        d = self.dynamic
        return pd.DataFrame(
            {"event_time": [a.event_time for a in d], "estimate": [a.estimate for a in d],
             "se": [a.se for a in d], "ci_lo": [a.ci95[0] for a in d], "ci_hi": [a.ci95[1] for a in d],
             "band_lo": [a.estimate - self.dynamic_crit * a.se for a in d],
             "band_hi": [a.estimate + self.dynamic_crit * a.se for a in d]}
        )


def estimate_gta(panel, control: str = "never", include_pre: bool = True, window: int | None = 60,
                 reps: int = 999, seed: int = 0, threads: int = 1) -> GTAResult:
    """Cells, dynamic and overall aggregates, all with bootstrap SEs.

    Cell SEs are bootstrapped too; the dynamic aggregates get a sup-t band.
    """
    wp = _as_wide(panel)
    cells = att_surface(wp, control, include_pre, window)
    if not cells:
        raise ValueError("no estimable group-time cells")
    horizons = sorted({c.event_time for c in cells})
    dynamic = [aggregate_dynamic(cells, e) for e in horizons]
    overall = aggregate_overall(cells)
    k_c, k_d = len(cells), len(dynamic)
    infl = np.column_stack([c.influence for c in cells] + [d.influence for d in dynamic] + [overall.influence])
    est = np.array([c.att for c in cells] + [d.estimate for d in dynamic] + [overall.estimate])
    bs = multiplier_bootstrap(infl, est, reps, seed, threads)
    for i, c in enumerate(cells):
        c.se = float(bs.se[i])
    for i, d in enumerate(dynamic):
        d.se = float(bs.se[k_c + i])
        d.ci95 = (d.estimate - Z95 * d.se, d.estimate + Z95 * d.se)
    overall.se = float(bs.se[-1])
    overall.ci95 = (overall.estimate - Z95 * overall.se, overall.estimate + Z95 * overall.se)
    # sup-t over the dynamic block only
    dyn_bs = multiplier_bootstrap(infl[:, k_c:k_c + k_d], est[k_c:k_c + k_d], reps, seed, threads)
    return GTAResult(cells, dynamic, overall, dyn_bs.crit, reps, seed)
