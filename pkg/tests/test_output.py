import json
from datetime import date, timedelta

import geojson
import numpy as np
import pytest

from framework.errors import GridMismatch, IoFailure, SnapshotError, TruncatedPayload, WindowTooLarge
from models.danger import DangerMap
from models.grid import SampleTensor
from services.inference import classify_danger
from services.output import (
    fdi_window_max,
    forecast_name,
    geojson_bytes,
    geojson_document,
    netcdf_bytes,
    read_grid_netcdf3,
    read_input_snapshot,
    snapshot_name,
    write_grid_netcdf3,
    write_geojson,
    write_input_snapshot,
    write_netcdf3,
)
from tests.factories import axis, hourly, make_grid
from utils.atomic import OutputBatch, atomic_write_bytes
from utils.cells import SINGLE_CELL_SPACING, cell_edges
from utils.netcdf3 import MAGIC, decode_netcdf3

D = date(2024, 7, 9)
P = [[0.1, 0.3, 0.5], [0.7, 0.9, 0.05], [0.2, 0.0, 1.0]]
PROVENANCE = {"lst_day": {"fallback": "latest-date", "requested": "2024-07-09", "served": "2024-07-08"}}


def danger_map(p=P, day=D, provenance=None, lat=None, lon=None):
    p_fire = make_grid(p, name="p_fire", units="1", lat=lat, lon=lon)
    return DangerMap(
        pilot="demo",
        p_fire=p_fire,
        p_nofire=p_fire.replace(name="p_nofire", values=1 - p_fire.values),
        category=classify_danger(p_fire, (0.2, 0.4, 0.6, 0.8)),
        forecast_date=day,
        provenance=provenance or {},
    )


def test_file_names():
    assert forecast_name("demo", D, "geojson") == "fdi_demo_2024-07-09.geojson"
    assert forecast_name("demo", D, "nc") == "fdi_demo_2024-07-09.nc"
    assert snapshot_name("demo", D) == "input_demo_2024-07-09.nc"


# -----------------------------------------------------------------------------
# GeoJSON
# -----------------------------------------------------------------------------
def test_cell_edges():
    np.testing.assert_allclose(cell_edges(np.array([0.0, 0.1, 0.2])), [-0.05, 0.05, 0.15, 0.25])
    np.testing.assert_allclose(cell_edges(np.array([5.0])), [5 - SINGLE_CELL_SPACING / 2, 5 + SINGLE_CELL_SPACING / 2])


def test_geojson_suppresses_lowest_category():
    doc = geojson.loads(geojson_bytes(danger_map(provenance=PROVENANCE)).decode("utf-8"))
    assert doc.is_valid, doc.errors()
    assert len(doc["features"]) == 6
    assert sorted(f["properties"]["category"] for f in doc["features"]) == [2, 2, 3, 4, 5, 5]
    assert doc["metadata"] == {"pilot": "demo", "forecast_date": "2024-07-09", "fallback_provenance": PROVENANCE}

    everything = geojson_document(danger_map(), suppress_category_1=False)
    assert len(everything["features"]) == 9


def test_geojson_cells_are_closed_counter_clockwise_rings():
    doc = geojson.loads(geojson_bytes(danger_map()).decode("utf-8"))
    first = doc["features"][0]
    assert first["properties"] == {"p_fire": 0.3, "category": 2, "date": "2024-07-09", "lat": 40.0, "lon": 10.1}
    ring = first["geometry"]["coordinates"][0]
    np.testing.assert_allclose(ring, [[10.05, 39.95], [10.15, 39.95], [10.15, 40.05], [10.05, 40.05], [10.05, 39.95]])
    for feature in doc["features"]:
        ring = np.asarray(feature["geometry"]["coordinates"][0])
        assert ring[0].tolist() == ring[-1].tolist()
        x, y = ring[:, 0], ring[:, 1]
        assert np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]) > 0


def test_geojson_is_deterministic():
    assert geojson_bytes(danger_map(provenance=PROVENANCE)) == geojson_bytes(danger_map(provenance=PROVENANCE))


def test_geojson_single_cell():
    doc = geojson.loads(geojson_bytes(danger_map(p=[[0.9]])).decode("utf-8"))
    ring = np.asarray(doc["features"][0]["geometry"]["coordinates"][0])
    assert ring[:, 0].max() - ring[:, 0].min() == pytest.approx(SINGLE_CELL_SPACING)


# -----------------------------------------------------------------------------
# NetCDF forecast
# -----------------------------------------------------------------------------
def test_netcdf_forecast_contents():
    dmap = danger_map(provenance=PROVENANCE)
    data = netcdf_bytes(dmap)
    assert data[:4] == MAGIC
    ds = decode_netcdf3(data)
    assert ds.dimensions == {"time": 1, "lat": 3, "lon": 3}
    assert ds.variables["time"].data.tolist() == [float((D - date(1970, 1, 1)).days)]
    assert ds.variables["time"].attributes["units"] == "days since 1970-01-01"
    np.testing.assert_array_equal(ds.variables["p_fire"].data[0], dmap.p_fire.values)
    assert ds.variables["p_fire"].data.dtype == np.float32
    assert ds.variables["category"].data.dtype == np.int32
    assert ds.variables["category"].data[0].tolist() == [[1, 2, 3], [4, 5, 1], [2, 1, 5]]
    np.testing.assert_array_equal(ds.variables["lat"].data, dmap.p_fire.lat)
    assert ds.attributes["pilot"] == "demo"
    assert ds.attributes["forecast_date"] == "2024-07-09"
    assert json.loads(ds.attributes["fallback_provenance"]) == PROVENANCE


def test_netcdf_single_pixel():
    ds = decode_netcdf3(netcdf_bytes(danger_map(p=[[0.45]])))
    assert ds.variables["category"].data.tolist() == [[[3]]]


def test_netcdf_truncated_by_one_byte():
    with pytest.raises(TruncatedPayload):
        decode_netcdf3(netcdf_bytes(danger_map())[:-1])


def test_grid_file_round_trip(tmp_path):
    values = np.random.default_rng(2).normal(size=(5, 3, 4)).astype(np.float32)
    g = make_grid(values, name="t2m", units="K", time=hourly(D, 5))
    assert read_grid_netcdf3(write_grid_netcdf3(g, tmp_path / "t2m.nc")) == g
    static = make_grid(values[0], name="dem", units="m")
    assert read_grid_netcdf3(write_grid_netcdf3(static, tmp_path / "dem.nc")) == static


# -----------------------------------------------------------------------------
# input snapshot
# -----------------------------------------------------------------------------
def _sample(features=("ndvi", "t2m")):
    nf = len(features)
    return SampleTensor(
        values=np.random.default_rng(1).normal(size=(nf, 3, 2, 4)),
        features=features,
        dates=(D - timedelta(days=2), D - timedelta(days=1), D),
        lat=axis(41.5, 0.03, 2),
        lon=axis(15.5, 0.03, 4),
    )


def test_snapshot_round_trip(tmp_path):
    sample = _sample()
    path = write_input_snapshot(sample, tmp_path / snapshot_name("demo", D), "demo", PROVENANCE)
    back, provenance = read_input_snapshot(path)
    np.testing.assert_array_equal(back.values, sample.values)
    assert back.features == sample.features
    assert back.dates == sample.dates
    np.testing.assert_array_equal(back.lat, sample.lat)
    np.testing.assert_array_equal(back.lon, sample.lon)
    assert provenance == PROVENANCE
    assert decode_netcdf3(path.read_bytes()).attributes["feature_names"] == "ndvi,t2m"


def test_snapshot_rejects_unnamed_features(tmp_path):
    empty = SampleTensor(values=np.zeros((0, 1, 1, 1)), features=(), dates=(D,), lat=[1.0], lon=[1.0])
    with pytest.raises(SnapshotError):
        write_input_snapshot(empty, tmp_path / "x.nc")
    with pytest.raises(SnapshotError):
        write_input_snapshot(_sample(("a,b", "c")), tmp_path / "x.nc")
    assert not (tmp_path / "x.nc").exists()


def test_snapshot_missing_file(tmp_path):
    with pytest.raises(SnapshotError):
        read_input_snapshot(tmp_path / "absent.nc")


# -----------------------------------------------------------------------------
# trailing window maximum
# -----------------------------------------------------------------------------
def _series(n, seed=0):
    rng = np.random.default_rng(seed)
    return [danger_map(p=rng.random((3, 3)), day=D - timedelta(days=n - 1 - k)) for k in range(n)]


def test_window_max_of_one_is_latest_map():
    maps = _series(4)
    np.testing.assert_array_equal(fdi_window_max(maps, 1).values, maps[-1].p_fire.values)


def test_window_max_of_constant_maps():
    maps = [danger_map(p=np.full((3, 3), 0.3), day=D - timedelta(days=k)) for k in range(3)]
    np.testing.assert_array_equal(fdi_window_max(maps, 3).values, maps[0].p_fire.values)


@pytest.mark.parametrize("seed", range(10))
def test_window_max_matches_naive_loop_and_grows_with_window(seed):
    maps = _series(6, seed)
    previous = None
    for window in range(1, 7):
        got = fdi_window_max(maps, window).values
        expected = np.zeros((3, 3), dtype=np.float32)
        for i in range(3):
            for j in range(3):
                expected[i, j] = max(m.p_fire.values[i, j] for m in maps[-window:])
        np.testing.assert_array_equal(got, expected)
        if previous is not None:
            assert np.all(got >= previous)
        previous = got


def test_window_max_errors():
    maps = _series(2)
    with pytest.raises(WindowTooLarge):
        fdi_window_max(maps, 3)
    with pytest.raises(WindowTooLarge):
        fdi_window_max(maps, 0)
    shifted = danger_map(lat=axis(50.0, 0.1, 3))
    with pytest.raises(GridMismatch):
        fdi_window_max([shifted, maps[-1]], 2)


# -----------------------------------------------------------------------------
# publishing
# -----------------------------------------------------------------------------
def test_output_batch_publishes_together(tmp_path):
    batch = OutputBatch()
    batch.add(tmp_path / "out" / "a.geojson", b"a")
    batch.add(tmp_path / "out" / "a.nc", b"b")
    assert not (tmp_path / "out" / "a.nc").exists()
    assert batch.commit() == [tmp_path / "out" / "a.geojson", tmp_path / "out" / "a.nc"]
    assert (tmp_path / "out" / "a.nc").read_bytes() == b"b"


def test_output_batch_failure_leaves_nothing(tmp_path):
    (tmp_path / "blocker").write_text("a file, not a directory")
    batch = OutputBatch()
    batch.add(tmp_path / "ok.geojson", b"a")
    batch.add(tmp_path / "blocker" / "x.nc", b"b")
    with pytest.raises(IoFailure):
        batch.commit()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["blocker"]


def test_atomic_write_replaces(tmp_path):
    path = atomic_write_bytes(tmp_path / "f.bin", b"one")
    atomic_write_bytes(path, b"two")
    assert path.read_bytes() == b"two"
    assert [p.name for p in tmp_path.iterdir()] == ["f.bin"]


def test_write_products_to_disk(tmp_path):
    dmap = danger_map(p=[[0.1, 0.5], [0.7, 0.9]])

    suppressed = json.loads(write_geojson(dmap, tmp_path / "a.geojson").read_text())
    everything = json.loads(write_geojson(dmap, tmp_path / "b.geojson", suppress_category_1=False).read_text())
    assert (len(suppressed["features"]), len(everything["features"])) == (3, 4)
    ds = decode_netcdf3(write_netcdf3(dmap, tmp_path / "a.nc").read_bytes())
    assert ds.dimensions == {"time": 1, "lat": 2, "lon": 2}


def test_write_into_a_file_path_fails(tmp_path):
    (tmp_path / "blocker").write_text("")

    with pytest.raises(IoFailure):
        write_geojson(danger_map(), tmp_path / "blocker" / "x.geojson")
