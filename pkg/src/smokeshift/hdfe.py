"""High-dimensional fixed-effects least squares with clustered inference.

The fixed effects (and optional group-specific linear trends) are
absorbed by alternating projections; the remaining regressors are fitted
by QR least squares and the variance is a CR1 cluster sandwich.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.linalg import solve_triangular

from .timing import DEFAULT_TRIM_MONTHS, phase_indicators, relative_bins, trim_to_window

log = logging.getLogger(__name__)

Z95 = 1.959963984540054

TREATMENTS = ("EventStudy", "StaticDiD", "StaticDiDWithDownwind")
TREND_MODES = ("UnitSpecific", "CBSpecific", "None")
CONTROL_GROUPS = ("all", "drop_outside_adopting", "drop_non_adopting")


class CollinearityWarning(UserWarning):
    pass


class EstimationError(ValueError):
    pass


def _strict_init(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class Interactions:
    by: str
    keller_controls: bool = False


@dataclass
class DesignSpec:
    """Declarative regression design.

    The data frame handed to :func:`estimate` carries standard columns
    produced by :mod:`smokeshift.frames`: ``time_col`` (calendar month index
    for fixed effects and trends), ``clock_col`` (month index that is
    compared with the event dates; conception month for individuals),
    ``event``/``operation`` (month indices, NaN if untreated), ``inside``,
    ``downwind``, ``dw_event``/``dw_operation`` and ``control_class``.
    """

    outcome: str
    fixed_effects: list[str]
    cluster_dim: str
    treatment: str = "StaticDiD"
    bin_width: int = 1
    window: int = 60
    reference: int = -1
    covariates: list[str] = field(default_factory=list)
    interactions: Interactions | None = None
    trend_mode: str = "UnitSpecific"
    trend_unit: str = "unit"
    cb_col: str = "cb_id"
    time_col: str = "t"
    clock_col: str = "clock"
    trim: int | None = DEFAULT_TRIM_MONTHS
    control_group: str = "all"
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        if isinstance(self.interactions, dict):
            self.interactions = _strict_init(Interactions, self.interactions)
        if self.treatment not in TREATMENTS:
            raise ValueError(f"treatment must be one of {TREATMENTS}")
        if self.trend_mode not in TREND_MODES:
            raise ValueError(f"trend_mode must be one of {TREND_MODES}")
        if self.control_group not in CONTROL_GROUPS:
            raise ValueError(f"control_group must be one of {CONTROL_GROUPS}")
        if not self.cluster_dim:
            raise ValueError("cluster_dim must be set")
        if self.bin_width not in (1, 6):
            raise ValueError("bin_width must be 1 or 6")

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpec":
        return _strict_init(cls, dict(d))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClusterVcov:
    matrix: np.ndarray
    small_sample: str = "CR1"


@dataclass
class EstimateRow:
    term: str
    coef: float
    se: float
    t: float
    ci95: tuple[float, float]


@dataclass
class EstimateTable:
    rows: list[EstimateRow]
    n_obs: int
    n_clusters: int
    fe_dims: list[str]
    converged: bool
    demeaning_iterations: int
    dropped: list[str] = field(default_factory=list)
    vcov: ClusterVcov | None = None

    def __getitem__(self, term: str) -> EstimateRow:
        for r in self.rows:
            if r.term == term:
                return r
        raise KeyError(term)

    def __contains__(self, term: str) -> bool:
        return any(r.term == term for r in self.rows)

    @property
    def terms(self) -> list[str]:
        return [r.term for r in self.rows]

    def coef(self, term: str) -> float:
        return self[term].coef

    def se(self, term: str) -> float:
        return self[term].se

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "term": [r.term for r in self.rows],
                "coef": [r.coef for r in self.rows],
                "se": [r.se for r in self.rows],
                "t": [r.t for r in self.rows],
                "ci_lo": [r.ci95[0] for r in self.rows],
                "ci_hi": [r.ci95[1] for r in self.rows],
            }
        )

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"term": r.term, "coef": r.coef, "se": r.se, "t": r.t, "ci95": list(r.ci95)}
                for r in self.rows
            ],
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "fe_dims": list(self.fe_dims),
            "converged": self.converged,
            "demeaning_iterations": self.demeaning_iterations,
            "dropped": list(self.dropped),
            "small_sample": self.vcov.small_sample if self.vcov else None,
        }

    def to_text(self) -> str:
        w = max([len("term")] + [len(r.term) for r in self.rows])
        lines = [f"{'term':<{w}}  {'coef':>12}  {'se':>10}  {'t':>8}  {'95% CI':>25}"]
        for r in self.rows:
            ci = f"[{r.ci95[0]:.4f}, {r.ci95[1]:.4f}]"
            lines.append(f"{r.term:<{w}}  {r.coef:>12.4f}  {r.se:>10.4f}  {r.t:>8.3f}  {ci:>25}")
        lines.append(
            f"N = {self.n_obs}, clusters = {self.n_clusters}, FE: {', '.join(self.fe_dims) or 'none'}"
            f", converged = {self.converged} ({self.demeaning_iterations} sweeps)"
        )
        if self.dropped:
            lines.append(f"dropped (collinear): {', '.join(self.dropped)}")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# design terms


def event_term(tau: int) -> str:
    return f"tau{tau:+d}"


def build_event_dummies(
    data: pd.DataFrame,
    bin_width: int = 1,
    window: int = 60,
    reference: int = -1,
    clock_col: str = "clock",
    event_col: str = "event",
    inside_col: str = "inside",
    extra_reference: int | None = None,
) -> pd.DataFrame:
    """One 0/1 column per relative-time bin in the window, reference omitted.

    Only rows of units inside an SCA can be non-zero. Rows whose bin lies
    outside the window get no dummy.
    """
    lo = int(np.floor(-window / bin_width))
    hi = window // bin_width
    ev = data[event_col].to_numpy(dtype=float)
    treated = (data[inside_col].to_numpy(dtype=float) > 0) & ~np.isnan(ev)
    tau = np.full(len(data), np.iinfo(np.int64).min, dtype=np.int64)
    off = data[clock_col].to_numpy(dtype=float)[treated] - ev[treated]
    tau[treated] = relative_bins(off.astype(np.int64), bin_width)
    cols = {}
    for k in range(lo, hi + 1):
        if k == reference or k == extra_reference:
            continue
        cols[event_term(k)] = (tau == k).astype(float)
    return pd.DataFrame(cols, index=data.index)


def build_static_terms(data: pd.DataFrame, with_downwind: bool = False, clock_col: str = "clock") -> pd.DataFrame:
    """Inside x Adj and Inside x Post, plus the downwind pair if requested.

    The downwind clock runs from the earliest upwind SCA's dates, carried in
    ``dw_event``/``dw_operation``.
    """
    clock = data[clock_col].to_numpy(dtype=float)
    adj, post = phase_indicators(clock, data["event"], data["operation"])
    inside = data["inside"].to_numpy(dtype=float)
    cols = {"inside_adj": inside * adj, "inside_post": inside * post}
    if with_downwind:
        dadj, dpost = phase_indicators(clock, data["dw_event"], data["dw_operation"])
        dw = data["downwind"].to_numpy(dtype=float)
        cols["downwind_adj"] = dw * dadj
        cols["downwind_post"] = dw * dpost
    return pd.DataFrame(cols, index=data.index)


# --------------------------------------------------------------------------
# absorption


@dataclass
class Demeaned:
    X: np.ndarray
    iterations: int
    converged: bool
    k_absorbed: int


class _Group:
    def __init__(self, labels):
        codes, uniq = pd.factorize(np.asarray(labels), sort=True)
        if (codes < 0).any():
            raise EstimationError("fixed-effect labels contain missing values")
        self.codes = codes
        self.G = len(uniq)
        n = len(codes)
        self.D = sparse.csr_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, self.G))
        self.DT = self.D.T.tocsr()
        self.counts = np.bincount(codes, minlength=self.G).astype(float)

    def sums(self, X):
        return self.DT @ X


class _TrendGroup(_Group):
    def __init__(self, labels, t):
        super().__init__(labels)
        t = np.asarray(t, dtype=float)
        tbar = np.bincount(self.codes, weights=t, minlength=self.G) / self.counts
        self.tc = t - tbar[self.codes]
        self.stt = np.bincount(self.codes, weights=self.tc**2, minlength=self.G)
        scale = np.maximum(np.bincount(self.codes, weights=np.abs(t), minlength=self.G), 1.0)
        self.has_slope = self.stt > 1e-12 * scale**2 / np.maximum(self.counts, 1)
        self.inv_stt = np.where(self.has_slope, 1.0 / np.where(self.has_slope, self.stt, 1.0), 0.0)


def _absorbed_dof(groups: list[_Group], trend: _TrendGroup | None) -> int:
    """Intercepts and slopes swept out, assuming connected groups (one
    redundant intercept per extra block)."""
    blocks = len(groups) + (trend is not None)
    k = sum(g.G for g in groups) - max(blocks - 1, 0)
    if trend is not None:
        k += trend.G + int(trend.has_slope.sum())
    return k


def demean(
    X: np.ndarray,
    fe_dims: Sequence,
    unit_trends=None,
    time=None,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> Demeaned:
    """Residualise the columns of ``X`` on fixed effects and group trends.

    ``fe_dims`` is a list of label arrays, one per fixed-effect dimension.
    ``unit_trends`` is an optional label array whose groups each get their
    own intercept and slope in ``time``. Sweeps repeat until the largest
    absolute change in any entry is below ``tol``.
    """
    X = np.array(X, dtype=float, copy=True)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    groups = [_Group(lab) for lab in fe_dims]
    trend = None
    if unit_trends is not None:
        if time is None:
            raise ValueError("unit_trends needs a time array")
        trend = _TrendGroup(unit_trends, time)
        # the trend projection already contains the group intercept
        groups = [g for g in groups if not np.array_equal(g.codes, trend.codes)]
    k_abs = _absorbed_dof(groups, trend)

    n_proj = len(groups) + (trend is not None)
    if n_proj == 0:
        return Demeaned(X[:, 0] if squeeze else X, 0, True, 0)

    def sweep(X):
        for g in groups:
            X -= (g.sums(X) / g.counts[:, None])[g.codes]
        if trend is not None:
            mean = trend.sums(X) / trend.counts[:, None]
            slope = trend.sums(trend.tc[:, None] * X) * trend.inv_stt[:, None]
            X -= mean[trend.codes] + trend.tc[:, None] * slope[trend.codes]
        return X

    converged = False
    it = 0
    if n_proj == 1:
        sweep(X)
        it, converged = 1, True
    else:
        # columns leave the active set once their own sweep change is below tol
        active = np.arange(X.shape[1])
        while it < max_iter and len(active):
            Xa = X[:, active]
            prev = Xa.copy()
            sweep(Xa)
            it += 1
            X[:, active] = Xa
            done = np.max(np.abs(Xa - prev), axis=0, initial=0.0) < tol
            active = active[~done]
        converged = len(active) == 0
    if not converged:
        log.warning("demeaning did not converge in %d sweeps", max_iter)
    return Demeaned(X[:, 0] if squeeze else X, it, converged, k_abs)


# --------------------------------------------------------------------------
# least squares and variance


@dataclass
class OLSResult:
    coef: np.ndarray
    kept: list[int]
    dropped: list[int]
    resid: np.ndarray
    R: np.ndarray


def ols(X: np.ndarray, y: np.ndarray, scale: np.ndarray | None = None, rtol: float = 1e-6,
        names: Sequence[str] | None = None) -> OLSResult:
    """QR least squares with left-to-right removal of collinear columns.

    A column is dropped when its residual norm after projecting on the
    columns already kept is below ``rtol`` times its reference norm
    (``scale``, typically the norm before demeaning).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if scale is None:
        scale = np.linalg.norm(X, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    # |R_jj| of an unpivoted QR is the residual norm of column j after
    # projecting on all columns to its left
    Q, R = np.linalg.qr(X) if k else (None, np.zeros((0, 0)))
    diag = np.abs(np.diag(R))
    kept = [j for j in range(k) if diag[j] > rtol * scale[j]]
    dropped = [j for j in range(k) if j not in set(kept)]
    if dropped:
        label = [names[j] if names is not None else str(j) for j in dropped]
        warnings.warn(f"dropping collinear columns: {label}", CollinearityWarning, stacklevel=2)
    Xk = X[:, kept]
    if kept and not dropped:
        coef = solve_triangular(R, Q.T @ y)
        resid = y - Xk @ coef
    elif kept:
        Qk, R = np.linalg.qr(Xk)
        coef = solve_triangular(R, Qk.T @ y)
        resid = y - Xk @ coef
    else:
        R = np.zeros((0, 0))
        coef = np.zeros(0)
        resid = y.copy()
    return OLSResult(coef=coef, kept=kept, dropped=dropped, resid=resid, R=R)


def cluster_vcov(X: np.ndarray, residuals: np.ndarray, clusters, k_absorbed: int = 0,
                 R: np.ndarray | None = None) -> ClusterVcov:
    """CR1 sandwich. ``k_absorbed`` counts parameters swept out before OLS."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    codes, uniq = pd.factorize(np.asarray(clusters), sort=True)
    G = len(uniq)
    if G < 2:
        raise EstimationError("cluster-robust variance needs at least two clusters")
    n, k = X.shape
    if R is None:
        R = np.linalg.qr(X, mode="r")
    Rinv = solve_triangular(R, np.eye(k))
    bread = Rinv @ Rinv.T
    scores = np.zeros((G, k))
    np.add.at(scores, codes, X * e[:, None])
    meat = scores.T @ scores
    dof = n - k - k_absorbed
    if dof <= 0:
        raise EstimationError(f"no residual degrees of freedom (N={n}, K={k + k_absorbed})")
    c = G / (G - 1) * (n - 1) / dof
    V = c * bread @ meat @ bread
    return ClusterVcov(matrix=(V + V.T) / 2)


def _table(names, coef, V, **kw) -> EstimateTable:
    se = np.sqrt(np.clip(np.diag(V.matrix), 0, None))
    rows = []
    for nm, b, s in zip(names, coef, se):
        t = b / s if s > 0 else np.nan
        rows.append(EstimateRow(nm, float(b), float(s), float(t), (float(b - Z95 * s), float(b + Z95 * s))))
    return EstimateTable(rows=rows, vcov=V, **kw)


# --------------------------------------------------------------------------
# pipeline


def select_sample(data: pd.DataFrame, spec: DesignSpec) -> pd.DataFrame:
    df = data
    if spec.control_group == "drop_outside_adopting":
        df = df[df["control_class"] != "OutsideSCAInAdoptingCB"]
    elif spec.control_group == "drop_non_adopting":
        df = df[~df["control_class"].isin(["NonAdoptingCB", "OutsideCBNeverAdopter"])]
    return trim_to_window(df, "event", spec.clock_col, spec.trim)


def _covariate_block(df: pd.DataFrame, covariates: Sequence[str]) -> pd.DataFrame:
    parts = []
    for c in covariates:
        col = df[c]
        if col.dtype == object or isinstance(col.dtype, pd.CategoricalDtype) or col.dtype == bool:
            if col.dtype == bool:
                parts.append(col.astype(float).rename(c))
            else:
                parts.append(pd.get_dummies(col.astype(str), prefix=c, drop_first=True, dtype=float))
        else:
            parts.append(col.astype(float).rename(c))
    if not parts:
        return pd.DataFrame(index=df.index)
    return pd.concat(parts, axis=1)


def estimate(data: pd.DataFrame, spec: DesignSpec) -> EstimateTable:
    """Build treatment terms, absorb fixed effects and trends, fit, and
    compute clustered standard errors."""
    needed = [spec.outcome, spec.cluster_dim, *spec.covariates]
    if spec.interactions:
        needed.append(spec.interactions.by)
    missing = [c for c in needed + list(spec.fixed_effects) if c not in data.columns]
    if missing:
        raise EstimationError(f"columns not in data: {missing}")
    df = select_sample(data, spec)
    df = df.dropna(subset=list(dict.fromkeys(needed)))
    treated_rows = (df["inside"] > 0) & df["event"].notna()
    if not treated_rows.any():
        raise EstimationError("no treated observations in the estimation sample")

    if spec.treatment == "EventStudy":
        lo = int(np.floor(-spec.window / spec.bin_width))
        extra = None
        if spec.trend_mode == "UnitSpecific":
            off = (df.loc[treated_rows, spec.clock_col] - df.loc[treated_rows, "event"]).to_numpy()
            tau = relative_bins(off.astype(np.int64), spec.bin_width)
            if tau.min() >= lo and tau.max() <= spec.window // spec.bin_width:
                extra = lo
                log.warning(
                    "unit trends with a saturated event window: bin %d also omitted as reference", lo
                )
        terms = build_event_dummies(df, spec.bin_width, spec.window, spec.reference,
                                    clock_col=spec.clock_col, extra_reference=extra)
    else:
        terms = build_static_terms(df, spec.treatment == "StaticDiDWithDownwind", spec.clock_col)
    # terms no row switches on (unreached bins, zero-length phases) are not
    # identified; they are reported as dropped without a collinearity warning
    empty = [c for c in terms.columns if not terms[c].any()]
    terms = terms.drop(columns=empty)

    cov = _covariate_block(df, spec.covariates)
    blocks = [terms]
    if spec.interactions:
        by = df[spec.interactions.by].astype(float)
        blocks.append(terms.mul(by, axis=0).add_suffix(f":{spec.interactions.by}"))
        if spec.interactions.by not in spec.covariates:
            blocks.append(by.rename(spec.interactions.by).to_frame())
        if spec.interactions.keller_controls:
            blocks.append(cov.mul(by, axis=0).add_suffix(f":{spec.interactions.by}"))
    blocks.append(cov)
    Xdf = pd.concat(blocks, axis=1)
    names = list(Xdf.columns)
    X = Xdf.to_numpy(dtype=float)
    y = df[spec.outcome].to_numpy(dtype=float)

    fe = [df[c].to_numpy() for c in spec.fixed_effects]
    trend_labels = None
    if spec.trend_mode == "UnitSpecific":
        trend_labels = df[spec.trend_unit].to_numpy()
    elif spec.trend_mode == "CBSpecific":
        trend_labels = df[spec.cb_col].to_numpy()
    time_years = df[spec.time_col].to_numpy(dtype=float) / 12.0

    scale = np.linalg.norm(X, axis=0)
    dm = demean(np.column_stack([y, X]), fe, trend_labels, time_years, spec.tol, spec.max_iter)
    yt, Xt = dm.X[:, 0], dm.X[:, 1:]
    fit = ols(Xt, yt, scale=scale, names=names)
    kept_names = [names[j] for j in fit.kept]
    V = cluster_vcov(Xt[:, fit.kept], fit.resid, df[spec.cluster_dim].to_numpy(), dm.k_absorbed, fit.R)
    return _table(
        kept_names,
        fit.coef,
        V,
        n_obs=len(df),
        n_clusters=int(df[spec.cluster_dim].nunique()),
        fe_dims=list(spec.fixed_effects) + ([f"trend:{spec.trend_mode}"] if trend_labels is not None else []),
        converged=dm.converged,
        demeaning_iterations=dm.iterations,
        dropped=empty + [names[j] for j in fit.dropped],
    )


def cross_section_ols(rows: pd.DataFrame, outcome: str, regressors: Sequence[str],
                      controls: Sequence[str] = (), fixed_effects: Sequence[str] = ()) -> EstimateTable:
    """Plain OLS with an intercept (or absorbed fixed effects) and
    heteroskedasticity-robust (HC1) standard errors."""
    cols = [outcome, *regressors, *controls, *fixed_effects]
    df = rows.dropna(subset=cols)
    Xdf = _covariate_block(df, [*regressors, *controls])
    if fixed_effects:
        fe_dummies = [pd.get_dummies(df[c].astype(str), prefix=c, dtype=float) for c in fixed_effects]
        fe_dummies = [d.iloc[:, 1:] if i else d for i, d in enumerate(fe_dummies)]
        D = pd.concat(fe_dummies, axis=1)
    else:
        D = pd.DataFrame({"const": np.ones(len(df))}, index=df.index)
    n_reg = Xdf.shape[1]
    X = np.column_stack([Xdf.to_numpy(dtype=float), D.to_numpy(dtype=float)])
    names = list(Xdf.columns) + list(D.columns)
    if len(df) <= X.shape[1]:
        raise EstimationError(f"need more rows than parameters (n={len(df)}, k={X.shape[1]})")
    y = df[outcome].to_numpy(dtype=float)
    fit = ols(X, y, names=names)
    V = cluster_vcov(X[:, fit.kept], fit.resid, np.arange(len(df)), 0, fit.R)
    report = [i for i, j in enumerate(fit.kept) if j < n_reg or not fixed_effects]
    sub = ClusterVcov(V.matrix[np.ix_(report, report)])
    return _table(
        [names[fit.kept[i]] for i in report],
        fit.coef[report],
        sub,
        n_obs=len(df),
        n_clusters=len(df),
        fe_dims=list(fixed_effects),
        converged=True,
        demeaning_iterations=0,
        dropped=[names[j] for j in fit.dropped],
    )
