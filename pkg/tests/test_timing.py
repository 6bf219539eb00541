import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smokeshift.spatial import Polygon
from smokeshift.timing import (
    TreatmentPhase,
    TreatmentSchedule,
    YearMonth,
    classify_phase,
    conception_month,
    months_between,
    phase_indicators,
    relative_bins,
    relative_event_time,
    trim_to_window,
)

ym = st.builds(YearMonth, st.integers(1900, 2100), st.integers(1, 12))
SQ = Polygon.box(0, 0, 1, 1)


def sched(sub, op):
    return TreatmentSchedule("S", "CB", SQ, YearMonth.parse(sub), YearMonth.parse(op))


class TestYearMonth:
    def test_month_range_enforced(self):
        with pytest.raises(ValueError):
            YearMonth(1960, 13)
        with pytest.raises(ValueError):
            YearMonth(1960, 0)

    def test_parse_and_str(self):
        assert str(YearMonth.parse("1957-03")) == "1957-03"
        with pytest.raises(ValueError):
            YearMonth.parse("1957/03")

    @given(ym)
    def test_index_roundtrip(self, a):
        assert YearMonth.from_index(a.index) == a

    @given(ym, ym)
    def test_order_matches_calendar(self, a, b):
        assert (a < b) == (months_between(a, b) > 0)


@pytest.mark.parametrize("a,b,expect", [
    ("1960-03", "1960-03", 0),
    ("1960-01", "1961-01", 12),
    ("1962-11", "1961-05", -18),
])
def test_months_between_examples(a, b, expect):
    assert months_between(YearMonth.parse(a), YearMonth.parse(b)) == expect


@given(ym, ym)
def test_months_between_antisymmetric(a, b):
    assert months_between(a, b) == -months_between(b, a)


@pytest.mark.parametrize("birth,expect", [("1960-09", "1959-12"), ("1960-01", "1959-04"), ("1958-03", "1957-06")])
def test_conception_month(birth, expect):
    assert conception_month(YearMonth.parse(birth)) == YearMonth.parse(expect)


class TestRelativeEventTime:
    def test_six_months_before_is_minus_one(self):
        sub = YearMonth(1960, 7)
        assert relative_event_time(sub, sub.shift(-6), 6) == -1

    def test_twelve_months_after_is_two(self):
        sub = YearMonth(1960, 7)
        assert relative_event_time(sub, sub.shift(12), 6) == 2

    def test_event_month_is_zero(self):
        e = YearMonth(1958, 2)
        assert relative_event_time(e, e, 1) == 0

    def test_bad_bin_width(self):
        with pytest.raises(ValueError):
            relative_event_time(YearMonth(1960, 1), YearMonth(1960, 2), 3)

    @given(ym)
    def test_month_before_is_reference(self, e):
        assert relative_event_time(e, e.shift(-1), 1) == -1

    @given(ym, st.integers(-200, 200), st.sampled_from([1, 6]))
    def test_matches_floor_division(self, e, k, bw):
        assert relative_event_time(e, e.shift(k), bw) == math.floor(k / bw)
        assert relative_bins([k], bw)[0] == math.floor(k / bw)


class TestPhases:
    def test_examples(self):
        s = sched("1960-01", "1961-05")
        assert classify_phase(YearMonth(1959, 12), s) is TreatmentPhase.PRE
        assert classify_phase(YearMonth(1960, 1), s) is TreatmentPhase.ADJUSTMENT
        assert classify_phase(YearMonth(1961, 5), s) is TreatmentPhase.POST

    def test_operation_before_submission_rejected(self):
        with pytest.raises(ValueError):
            sched("1961-01", "1960-12")

    @given(ym, st.integers(0, 40), st.integers(-100, 100))
    def test_phases_partition_time(self, sub, gap, k):
        s = TreatmentSchedule("S", "CB", SQ, sub, sub.shift(gap))
        t = sub.shift(k)
        phase = classify_phase(t, s)
        flags = [t < s.submission, s.submission <= t < s.operation, t >= s.operation]
        assert sum(flags) == 1
        assert phase is [TreatmentPhase.PRE, TreatmentPhase.ADJUSTMENT, TreatmentPhase.POST][flags.index(True)]
        adj, post = phase_indicators([t.index], [sub.index], [s.operation.index])
        assert (adj[0], post[0]) == (float(flags[1]), float(flags[2]))

    def test_indicators_zero_without_event(self):
        adj, post = phase_indicators([10, 20], [np.nan, np.nan], [np.nan, np.nan])
        assert not adj.any() and not post.any()


class TestTrim:
    def frame(self):
        return pd.DataFrame({"event": [100.0, 100.0, 100.0, np.nan], "clock": [160, 161, 40, 500]})

    def test_boundary_inclusive(self):
        out = trim_to_window(self.frame(), half_width_months=60)
        assert out["clock"].tolist() == [160, 40, 500]

    def test_width_24(self):
        df = pd.DataFrame({"event": [100.0] * 4, "clock": [75, 76, 124, 125]})
        assert trim_to_window(df, half_width_months=24)["clock"].tolist() == [76, 124]

    def test_none_disables(self):
        assert len(trim_to_window(self.frame(), half_width_months=None)) == 4

    def test_nonpositive_width(self):
        with pytest.raises(ValueError):
            trim_to_window(self.frame(), half_width_months=0)

    @given(st.lists(st.tuples(st.integers(0, 300), st.one_of(st.none(), st.integers(0, 300))), max_size=40),
           st.integers(1, 120))
    def test_idempotent(self, rows, w):
        df = pd.DataFrame({"clock": [r[0] for r in rows],
                           "event": [np.nan if r[1] is None else float(r[1]) for r in rows]})
        once = trim_to_window(df, half_width_months=w)
        assert once.equals(trim_to_window(once, half_width_months=w))
