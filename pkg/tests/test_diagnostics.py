import math

import pytest

from smokeshift import diagnostics, pipeline, synth
from smokeshift.io import Boundaries
from smokeshift.spatial import CountyBorough, Polygon
from smokeshift.timing import TreatmentSchedule, YearMonth

CB = CountyBorough("CB1", Polygon.box(0, 0, 1000, 1000), True, 1e5)


def sca(sid, box, sub, op):
    return TreatmentSchedule(sid, "CB1", Polygon.box(*box), YearMonth.parse(sub), YearMonth.parse(op))


class TestTimingIndex:
    def test_cumulative_coverage(self):
        a = sca("A", (0, 0, 500, 100), "1953-06", "1955-01")  # 5%
        b = sca("B", (0, 500, 600, 600), "1954-01", "1956-01")  # 6%
        t = diagnostics.timing_index(Boundaries([CB], [a, b]))
        assert t.loc[0, "timing"] == YearMonth(1956, 1).index - YearMonth(1950, 1).index
        s = diagnostics.timing_index(Boundaries([CB], [a, b]), date="submission")
        assert s.loc[0, "timing"] == 48  # 1954-01, ordered by submission

    def test_overlap_counted_once(self):
        a = sca("A", (0, 0, 500, 100), "1953-06", "1955-01")
        b = sca("B", (0, 0, 500, 100), "1954-01", "1956-01")
        t = diagnostics.timing_index(Boundaries([CB], [a, b]))
        assert math.isnan(t.loc[0, "timing"])

    def test_coverage_threshold(self):
        a = sca("A", (0, 0, 500, 200), "1953-06", "1955-01")  # 10% exactly
        assert diagnostics.timing_index(Boundaries([CB], [a]), coverage=0.10).loc[0, "timing"] == 60
        assert math.isnan(diagnostics.timing_index(Boundaries([CB], [a]), coverage=0.11).loc[0, "timing"])

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            diagnostics.timing_index(Boundaries([CB], []), coverage=0)
        with pytest.raises(ValueError):
            diagnostics.timing_index(Boundaries([CB], []), date="approval")


def world_bounds(w):
    return Boundaries(w.rollout.cbs, w.rollout.schedules)


@pytest.fixture(scope="module")
def world():
    # dense boroughs submit first; inside stations sit 12 units lower throughout
    cfg = synth.SimConfig(seed=21, n_cbs=40, share_adopting=1.0, density_timing=1.0, inside_level_gap=-12.0,
                          n_stations_per_cb=4)
    return synth.simulate(cfg, individuals=False)


class TestRegressions:
    def test_characteristics_columns(self, world):
        b = world_bounds(world)
        chars = diagnostics.cb_characteristics(b, pipeline.station_frame(world.panel, b))
        assert {"timing", "density", "log_density", "ses_share", "pre_pollution"} <= set(chars.columns)
        assert chars["pre_pollution"].notna().all()

    def test_timing_on_itself(self, world):
        from smokeshift.hdfe import cross_section_ols
        chars = diagnostics.cb_characteristics(world_bounds(world))
        chars["timing_copy"] = chars["timing"]
        assert cross_section_ols(chars, "timing", ["timing_copy"]).coef("timing_copy") == pytest.approx(1.0)

    def test_density_sign_recovered(self, world):
        regs = diagnostics.timing_regressions(diagnostics.cb_characteristics(world_bounds(world)))
        tab = regs["log_density"]
        assert tab.coef("log_density") < 0 and tab["log_density"].t < -2

    def test_selection_gap_recovered(self, world):
        b = world_bounds(world)
        tab = diagnostics.selection_regression(pipeline.station_frame(world.panel, b), YearMonth(1955, 12))
        assert abs(tab.coef("ever_inside") + 12.0) < 2 * tab.se("ever_inside")
        assert tab.terms == ["ever_inside"]
