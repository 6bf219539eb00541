"""Calendar arithmetic and treatment-phase classification.

Everything here works on whole year-months. A ``YearMonth`` maps to an
integer month index (``year * 12 + month - 1``) which is what the data
frames carry in their time columns.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

if TYPE_CHECKING:
    from .spatial import Polygon

CONCEPTION_OFFSET_MONTHS = 9
DEFAULT_TRIM_MONTHS = 60


@dataclass(frozen=True, order=True)
class YearMonth:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in [1, 12], got {self.month}")

    @property
    def index(self) -> int:
        return self.year * 12 + self.month - 1

    @classmethod
    def from_index(cls, idx: int) -> "YearMonth":
        year, m0 = divmod(int(idx), 12)
        return cls(year, m0 + 1)

    @classmethod
    def parse(cls, text: str) -> "YearMonth":
        """Parse ``"YYYY-MM"``."""
        try:
            y, m = text.strip().split("-")
            return cls(int(y), int(m))
        except (AttributeError, ValueError) as exc:
            raise ValueError(f"not a YYYY-MM year-month: {text!r}") from exc

    def shift(self, months: int) -> "YearMonth":
        return YearMonth.from_index(self.index + months)

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


class TreatmentPhase(enum.Enum):
    PRE = "Pre"
    ADJUSTMENT = "Adjustment"
    POST = "Post"


@dataclass(frozen=True)
class TreatmentSchedule:
    sca_id: str
    cb_id: str
    boundary: "Polygon"
    submission: YearMonth
    operation: YearMonth

    def __post_init__(self):
        if self.operation < self.submission:
            raise ValueError(
                f"SCA {self.sca_id}: operation {self.operation} precedes "
                f"submission {self.submission}"
            )

    @property
    def adjustment_months(self) -> int:
        return months_between(self.submission, self.operation)


def months_between(a: YearMonth, b: YearMonth) -> int:
    """Signed number of months from ``a`` to ``b``."""
    return (b.year - a.year) * 12 + (b.month - a.month)


def conception_month(birth: YearMonth) -> YearMonth:
    return birth.shift(-CONCEPTION_OFFSET_MONTHS)


def relative_event_time(event: YearMonth, t: YearMonth, bin_width_months: int = 1) -> int:
    """Relative-time bin of ``t`` around ``event``.

    Bins are ``bin_width_months`` wide and anchored at the event month, so
    the bin that ends the month before the event is -1 and the bin that
    starts at the event is 0.
    """
    if bin_width_months not in (1, 6):
        raise ValueError(f"bin width must be 1 or 6 months, got {bin_width_months}")
    return math.floor(months_between(event, t) / bin_width_months)


def relative_bins(offsets, bin_width_months: int = 1) -> np.ndarray:
    """Vectorised ``relative_event_time`` on integer month offsets (``t - event``)."""
    if bin_width_months not in (1, 6):
        raise ValueError(f"bin width must be 1 or 6 months, got {bin_width_months}")
    return np.floor_divide(np.asarray(offsets, dtype=np.int64), bin_width_months)


def classify_phase(t: YearMonth, sched: TreatmentSchedule) -> TreatmentPhase:
    if t < sched.submission:
        return TreatmentPhase.PRE
    if t < sched.operation:
        return TreatmentPhase.ADJUSTMENT
    return TreatmentPhase.POST


def phase_indicators(clock, submission, operation) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (Adj, Post) 0/1 arrays from month indices.

    ``submission``/``operation`` may contain NaN for untreated rows, which
    then get zeros in both columns.
    """
    clock = np.asarray(clock, dtype=float)
    sub = np.asarray(submission, dtype=float)
    op = np.asarray(operation, dtype=float)
    with np.errstate(invalid="ignore"):
        adj = (clock >= sub) & (clock < op)
        post = clock >= op
    return adj.astype(float), post.astype(float)


def trim_to_window(
    observations: pd.DataFrame,
    event_col: str = "event",
    clock_col: str = "clock",
    half_width_months: int | None = DEFAULT_TRIM_MONTHS,
) -> pd.DataFrame:
    """Keep rows within ``half_width_months`` of their own event (inclusive).

    Rows without an event (NaN in ``event_col``) are never-treated and kept.
    ``half_width_months=None`` disables trimming.
    """
    if half_width_months is None:
        return observations
    if half_width_months <= 0:
        raise ValueError("half_width_months must be positive")
    ev = observations[event_col].to_numpy(dtype=float)
    dist = np.abs(observations[clock_col].to_numpy(dtype=float) - ev)
    keep = np.isnan(ev) | (dist <= half_width_months)
    return observations.loc[keep]
