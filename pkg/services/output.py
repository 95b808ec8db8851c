"""Forecast products and input snapshots.

File names: ``fdi_<pilot>_<date>.geojson|.nc`` and ``input_<pilot>_<date>.nc``.

NetCDF contract (CDF-1, non-record):
  forecast   dims time=1, lat, lon; variables time, lat, lon, p_fire (float),
             category (int); globals pilot, forecast_date, fallback_provenance (JSON)
  snapshot   dims feature, time, lat, lon; variables time, lat, lon, inputs (float);
             globals feature_names (comma separated), pilot, forecast_date,
             fallback_provenance
  grid file  dims [time,] lat, lon; one float variable named after the grid with
             a units attribute; time in hours since the epoch
"""
from __future__ import annotations

import json
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import geojson
import numpy as np

from framework.errors import BadGridFile, GridMismatch, SnapshotError, WindowTooLarge
from models.danger import DangerMap
from models.grid import Grid, SampleTensor
from utils.atomic import atomic_write_bytes
from utils.cells import DECIMALS, dumps, grid_features
from utils.netcdf3 import NcDataset, decode_netcdf3, encode_netcdf3

EPOCH = datetime(1970, 1, 1)
DAYS_UNITS = "days since 1970-01-01"
HOURS_UNITS = "hours since 1970-01-01 00:00:00"

Provenance = Dict[str, Dict[str, str]]


def forecast_name(pilot: str, day: date, ext: str) -> str:
    return f"fdi_{pilot}_{day.isoformat()}.{ext}"


def snapshot_name(pilot: str, day: date) -> str:
    return f"input_{pilot}_{day.isoformat()}.nc"


def _provenance_json(provenance: Provenance) -> str:
    return json.dumps(provenance, sort_keys=True, separators=(",", ":"))


def _days(d: date) -> float:
    return float((datetime(d.year, d.month, d.day) - EPOCH).days)


def _add_latlon(ds: NcDataset, lat: np.ndarray, lon: np.ndarray) -> None:
    ds.add_variable("lat", ("lat",), np.asarray(lat, dtype=np.float64), units="degrees_north", standard_name="latitude")
    ds.add_variable("lon", ("lon",), np.asarray(lon, dtype=np.float64), units="degrees_east", standard_name="longitude")


# -----------------------------------------------------------------------------
# GeoJSON
# -----------------------------------------------------------------------------
def geojson_document(dmap: DangerMap, suppress_category_1: bool = True) -> geojson.FeatureCollection:
    p = dmap.p_fire.values
    cat = dmap.categories
    day = dmap.forecast_date.isoformat()
    lat, lon = dmap.p_fire.lat, dmap.p_fire.lon

    def props():
        for i in range(lat.size):
            for j in range(lon.size):
                c = int(cat[i, j])
                if suppress_category_1 and c == 1:
                    yield None
                    continue
                yield {
                    "p_fire": round(float(p[i, j]), DECIMALS),
                    "category": c,
                    "date": day,
                    "lat": round(float(lat[i]), DECIMALS),
                    "lon": round(float(lon[j]), DECIMALS),
                }

    return geojson.FeatureCollection(
        grid_features(lat, lon, props()),
        metadata={
            "pilot": dmap.pilot,
            "forecast_date": day,
            "fallback_provenance": dmap.provenance,
        },
    )


def geojson_bytes(dmap: DangerMap, suppress_category_1: bool = True) -> bytes:
    return (dumps(geojson_document(dmap, suppress_category_1)) + "\n").encode("utf-8")


def write_geojson(dmap: DangerMap, path: Path, suppress_category_1: bool = True) -> Path:
    return atomic_write_bytes(path, geojson_bytes(dmap, suppress_category_1))


# -----------------------------------------------------------------------------
# NetCDF-3 forecast
# -----------------------------------------------------------------------------
def danger_dataset(dmap: DangerMap) -> NcDataset:
    h, w = dmap.p_fire.shape
    ds = NcDataset(dimensions={"time": 1, "lat": h, "lon": w})
    ds.attributes = {
        "title": "Fire danger forecast",
        "pilot": dmap.pilot,
        "forecast_date": dmap.forecast_date.isoformat(),
        "fallback_provenance": _provenance_json(dmap.provenance),
    }
    ds.add_variable("time", ("time",), np.array([_days(dmap.forecast_date)]), units=DAYS_UNITS)
    _add_latlon(ds, dmap.p_fire.lat, dmap.p_fire.lon)
    ds.add_variable(
        "p_fire", ("time", "lat", "lon"), dmap.p_fire.values[None].astype(np.float32),
        units="1", long_name="probability of fire occurrence",
    )
    ds.add_variable(
        "category", ("time", "lat", "lon"), dmap.categories[None].astype(np.int32),
        units="1", long_name="fire danger category",
    )
    return ds


def netcdf_bytes(dmap: DangerMap) -> bytes:
    return encode_netcdf3(danger_dataset(dmap))


def write_netcdf3(dmap: DangerMap, path: Path) -> Path:
    return atomic_write_bytes(path, netcdf_bytes(dmap))


# -----------------------------------------------------------------------------
# Input snapshot
# -----------------------------------------------------------------------------
def snapshot_bytes(sample: SampleTensor, pilot: str = "", provenance: Optional[Provenance] = None) -> bytes:
    if not sample.features:
        raise SnapshotError("cannot snapshot a sample without features")
    if any("," in f for f in sample.features):
        raise SnapshotError("feature names may not contain commas")
    nf, days, h, w = sample.values.shape
    ds = NcDataset(dimensions={"feature": nf, "time": days, "lat": h, "lon": w})
    ds.attributes = {
        "feature_names": ",".join(sample.features),
        "pilot": pilot,
        "forecast_date": sample.dates[-1].isoformat(),
        "fallback_provenance": _provenance_json(provenance or {}),
    }
    ds.add_variable("time", ("time",), np.array([_days(d) for d in sample.dates]), units=DAYS_UNITS)
    _add_latlon(ds, sample.lat, sample.lon)
    ds.add_variable("inputs", ("feature", "time", "lat", "lon"), sample.values.astype(np.float32), units="1")
    return encode_netcdf3(ds)


def write_input_snapshot(
    sample: SampleTensor,
    path: Path,
    pilot: str = "",
    provenance: Optional[Provenance] = None,
) -> Path:
    return atomic_write_bytes(path, snapshot_bytes(sample, pilot, provenance))


def read_input_snapshot(path: Path) -> Tuple[SampleTensor, Provenance]:
    """Reload a snapshot and the fallback provenance recorded with it."""
    try:
        ds = decode_netcdf3(Path(path).read_bytes())
        features = tuple(ds.attributes["feature_names"].split(","))
        dates = tuple((EPOCH + timedelta(days=float(t))).date() for t in ds.variables["time"].data)
        sample = SampleTensor(
            values=ds.variables["inputs"].data,
            features=features,
            dates=dates,
            lat=ds.variables["lat"].data,
            lon=ds.variables["lon"].data,
        )
        provenance = json.loads(ds.attributes.get("fallback_provenance", "{}"))
    except OSError as e:
        raise SnapshotError(f"cannot read snapshot {path}: {e}") from e
    except (KeyError, ValueError) as e:
        raise SnapshotError(f"malformed snapshot {path}: {e}") from e
    return sample, provenance


# -----------------------------------------------------------------------------
# Generic grid files
# -----------------------------------------------------------------------------
def grid_dataset(g: Grid) -> NcDataset:
    dims = {"lat": g.lat.size, "lon": g.lon.size}
    if g.is_temporal:
        dims = {"time": len(g.time), **dims}
    ds = NcDataset(dimensions=dims)
    if g.is_temporal:
        hours = np.array([(t - EPOCH).total_seconds() / 3600.0 for t in g.time])
        ds.add_variable("time", ("time",), hours, units=HOURS_UNITS)
    _add_latlon(ds, g.lat, g.lon)
    ds.add_variable(g.name, g.dims, g.values.astype(np.float32), units=g.units)
    return ds


def write_grid_netcdf3(g: Grid, path: Path) -> Path:
    return atomic_write_bytes(path, encode_netcdf3(grid_dataset(g)))


def read_grid_netcdf3(path: Path) -> Grid:
    """Read the single data variable of a grid file (the one that is not a coordinate)."""
    ds = decode_netcdf3(Path(path).read_bytes())
    data_vars = [v for name, v in ds.variables.items() if name not in ("time", "lat", "lon")]
    if len(data_vars) != 1:
        raise BadGridFile(f"expected one data variable, found {[v.name for v in data_vars]}")
    var = data_vars[0]
    time = []
    if "time" in var.dimensions:
        time = [EPOCH + timedelta(hours=float(h)) for h in ds.variables["time"].data]
    return Grid(
        name=var.name,
        units=str(var.attributes.get("units", "")),
        dims=var.dimensions,
        time=time,
        lat=ds.variables["lat"].data,
        lon=ds.variables["lon"].data,
        values=var.data.astype(np.float32),
    )


# -----------------------------------------------------------------------------
# Validation helper
# -----------------------------------------------------------------------------
def fdi_window_max(maps: Sequence[DangerMap], window: int) -> Grid:
    """Per-pixel max of p_fire over the trailing `window` maps."""
    if window < 1 or window > len(maps):
        raise WindowTooLarge(window, len(maps))
    tail = list(maps)[-window:]
    first = tail[-1].p_fire
    for m in tail:
        if not m.p_fire.same_space(first):
            raise GridMismatch(m.p_fire.name, f"map for {m.forecast_date.isoformat()} is on another grid")
    values = np.max(np.stack([m.p_fire.values for m in tail]), axis=0)
    return first.replace(name="p_fire_max", values=values)
