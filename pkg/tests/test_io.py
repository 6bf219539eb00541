import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smokeshift import io
from smokeshift.spatial import GeometryError

HEADER = ",".join(io.PANEL_COLUMNS)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def panel_text(*rows):
    return "\n".join([HEADER, *rows]) + "\n"


GOOD = [
    "ST1,CB1,100.5,200,1958,1,BlackSmoke,150.25",
    "ST1,CB1,100.5,200,1958,2,BlackSmoke,140",
    "ST1,CB1,100.5,200,1958,1,SO2,80",
]


class TestPanel:
    def test_three_rows(self, tmp_path):
        df = io.ingest_panel(write(tmp_path, "p.csv", panel_text(*GOOD)))
        assert len(df) == 3
        assert df["year"].dtype == np.int64 and df["concentration"].dtype == np.float64
        assert df["concentration"].tolist() == [150.25, 140.0, 80.0]

    def test_month_13_names_line(self, tmp_path):
        rows = GOOD[:2] + ["ST1,CB1,100.5,200,1958,13,BlackSmoke,150"]
        with pytest.raises(io.SchemaError, match=r"line\(s\) \[4\]"):
            io.ingest_panel(write(tmp_path, "p.csv", panel_text(*rows)))

    def test_duplicate_key(self, tmp_path):
        rows = GOOD + ["ST1,CB1,100.5,200,1958,2,BlackSmoke,99"]
        with pytest.raises(io.DuplicateKey, match=r"\[3, 5\]"):
            io.ingest_panel(write(tmp_path, "p.csv", panel_text(*rows)))

    @pytest.mark.parametrize("row,msg", [
        ("ST1,CB1,100.5,200,1958,3,BlackSmoke,-1", "negative"),
        ("ST1,CB1,abc,200,1958,3,BlackSmoke,1", "non-numeric"),
        ("ST1,CB1,1,200,1958.5,3,BlackSmoke,1", "non-integer"),
        ("ST1,CB1,1,200,1958,3,Ozone,1", "pollutant"),
        (",CB1,1,200,1958,3,SO2,1", "empty identifier"),
        ("ST1,CB1,1,200,1958,3,SO2,", "non-numeric"),
    ])
    def test_rejections(self, tmp_path, row, msg):
        with pytest.raises(io.SchemaError, match=msg):
            io.ingest_panel(write(tmp_path, "p.csv", panel_text(GOOD[0], row)))

    def test_header_mismatch(self, tmp_path):
        with pytest.raises(io.SchemaError, match="header"):
            io.ingest_panel(write(tmp_path, "p.csv", "station,cb\nA,B\n"))

    def test_round_trip_generated(self, tmp_path, small_world):
        path = io.write_csv(small_world.panel, tmp_path / "panel.csv")
        back = io.ingest_panel(path)
        pd.testing.assert_frame_equal(back, small_world.panel.reset_index(drop=True), check_exact=True)

    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=20))
    def test_float_round_trip(self, tmp_path_factory, values):
        d = tmp_path_factory.mktemp("rt")
        df = pd.DataFrame({"station_id": [f"S{i}" for i in range(len(values))], "cb_id": "C",
                           "easting_m": 0.1, "northing_m": 1 / 3, "year": 1960, "month": 1,
                           "pollutant": "SO2", "concentration": values})
        back = io.ingest_panel(io.write_csv(df, d / "p.csv"))
        assert back["concentration"].tolist() == values
        assert back["northing_m"].iloc[0] == 1 / 3


def feature(kind, coords, **props):
    return {"type": "Feature", "properties": {"kind": kind, **props},
            "geometry": {"type": "Polygon", "coordinates": [coords]}}


SQUARE = [[0, 0], [1000, 0], [1000, 1000], [0, 1000], [0, 0]]
INNER = [[100, 100], [400, 100], [400, 400], [100, 400], [100, 100]]


def collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


class TestBoundaries:
    def cb(self, **kw):
        return feature("cb", SQUARE, id="CB1", adoption="adopting", population_1951=1e5, **kw)

    def test_one_cb_one_sca(self, tmp_path):
        doc = collection(self.cb(density=12.5),
                         feature("sca", INNER, id="S1", cb_id="CB1", submission="1958-03", operation="1959-07"))
        b = io.ingest_boundaries(write(tmp_path, "b.geojson", json.dumps(doc)))
        assert len(b.schedules) == 1
        s = b.schedules[0]
        assert (s.sca_id, s.cb_id, str(s.submission), str(s.operation)) == ("S1", "CB1", "1958-03", "1959-07")
        assert b.cb("CB1").population_1951 == 1e5
        assert b.cb("CB1").attributes == {"density": 12.5}

    def test_operation_before_submission(self, tmp_path):
        doc = collection(self.cb(),
                         feature("sca", INNER, id="S1", cb_id="CB1", submission="1958-03", operation="1958-02"))
        with pytest.raises(io.BoundaryError, match="S1"):
            io.ingest_boundaries(write(tmp_path, "b.geojson", json.dumps(doc)))

    def test_unclosed_ring(self, tmp_path):
        doc = collection(feature("cb", SQUARE[:-1], id="CB1", adoption="adopting"))
        with pytest.raises(GeometryError):
            io.ingest_boundaries(write(tmp_path, "b.geojson", json.dumps(doc)))

    def test_missing_properties(self, tmp_path):
        doc = collection(self.cb(), feature("sca", INNER, id="S1", cb_id="CB1", submission="1958-03"))
        with pytest.raises(io.BoundaryError, match="operation"):
            io.ingest_boundaries(write(tmp_path, "b.geojson", json.dumps(doc)))

    def test_unknown_cb(self, tmp_path):
        doc = collection(self.cb(), feature("sca", INNER, id="S1", cb_id="CB9", submission="1958-03",
                                            operation="1959-01"))
        with pytest.raises(io.BoundaryError, match="CB9"):
            io.ingest_boundaries(write(tmp_path, "b.geojson", json.dumps(doc)))

    def test_sca_outside_cb_warns(self, tmp_path, caplog):
        outside = [[900, 900], [1500, 900], [1500, 1500], [900, 1500], [900, 900]]
        doc = collection(self.cb(), feature("sca", outside, id="S1", cb_id="CB1", submission="1958-03",
                                            operation="1959-01"))
        b = io.ingest_boundaries(write(tmp_path, "b.geojson", json.dumps(doc)))
        assert len(b.schedules) == 1
        assert "not within" in caplog.text

    def test_round_trip_generated(self, tmp_path, small_world):
        r = small_world.rollout
        path = io.write_geojson(io.boundaries_geojson(r.cbs, r.schedules), tmp_path / "b.geojson")
        b = io.ingest_boundaries(path)
        assert b.schedules == r.schedules
        assert b.cbs == r.cbs
        assert [c.attributes for c in b.cbs] == [c.attributes for c in r.cbs]

    def test_not_a_collection(self, tmp_path):
        with pytest.raises(io.BoundaryError):
            io.ingest_boundaries(write(tmp_path, "b.geojson", json.dumps({"type": "Feature"})))


class TestTablesAndWriters:
    def test_individuals_round_trip(self, tmp_path, small_world):
        people = small_world.individuals
        back = io.read_individuals(io.write_csv(people, tmp_path / "people.csv"))
        pd.testing.assert_frame_equal(back, people, check_exact=True)

    def test_weather_round_trip(self, tmp_path, small_world):
        back = io.read_weather(io.write_csv(small_world.weather, tmp_path / "w.csv"))
        pd.testing.assert_frame_equal(back, small_world.weather, check_exact=True)

    def test_missing_columns(self, tmp_path):
        with pytest.raises(io.SchemaError):
            io.read_weather(write(tmp_path, "w.csv", "cb_id,year\nA,1960\n"))
        with pytest.raises(io.SchemaError):
            io.read_individuals(write(tmp_path, "i.csv", "person_id\nP\n"))

    def test_json_is_canonical(self):
        a = io.dumps({"b": np.float64(0.1), "a": [np.int64(2), np.nan], "c": np.bool_(True)})
        assert a == io.dumps({"c": True, "a": [2, None], "b": 0.1})
        assert json.loads(a)["a"] == [2, None]

    def test_digest_and_manifest(self, tmp_path):
        p = write(tmp_path, "x.txt", "abc")
        assert io.file_digest(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        m = io.RunManifest("did", {"seed": 1}, "0.1.0", inputs={"x.txt": io.file_digest(p)})
        doc = json.loads(m.write(tmp_path).read_text())
        assert doc["command"] == "did" and doc["input_digests"]["x.txt"].startswith("ba78")
