"""Mints the bundled demo: fixture datastore, synthetic weights and scaling stats.

The demo covers a 16 x 16 target grid over the Gargano area with five model
features and a three-day window ending 2024-07-09. `lst_day` is injected to
fail on the forecast date so every run exercises the latest-date fallback.
"""
from __future__ import annotations

import json
import math
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel

from models.danger import ModelConfig
from models.grid import Grid
from models.stats import FeatureStats, ScalingStats
from services.output import write_grid_netcdf3
from services.weights import save_weights, synthetic_weights
from utils.atomic import atomic_write_bytes
from utils.opgrid import encode_opgrid

REPO_ROOT = Path(__file__).resolve().parent.parent
FORECAST_DATE = date(2024, 7, 9)
DAYS = 3
HIDDEN = 8
SEED = 7
FEATURES = ("ndvi", "lst_day", "t2m", "sfcWind", "slope")
WEATHER_DATES = [FORECAST_DATE - timedelta(days=k) for k in range(4, -1, -1)]
STATIC_DATE = date(2020, 1, 1)
NDVI_COMPOSITES = (date(2024, 6, 9), date(2024, 6, 25))

# native fixture grid; the pilot bbox keeps its inner 16 x 16 points
STEP = 0.03
LAT0, LON0, NATIVE = 41.44, 15.44, 20
NDVI_STEP, NDVI_LAT0, NDVI_LON0, NDVI_NATIVE = 0.06, 41.42, 15.42, 11

STATS = ScalingStats(features={
    "ndvi": FeatureStats(mean=0.5, std=0.15),
    "lst_day": FeatureStats(mean=305.0, std=6.0),
    "t2m": FeatureStats(mean=300.0, std=5.0),
    "sfcWind": FeatureStats(mean=5.0, std=2.5),
    "slope": FeatureStats(mean=4.0, std=3.0),
})


class DemoPaths(BaseModel):
    root: Path
    conf: Path
    library: Path
    fixtures: Path
    weights: Path
    stats: Path


def _axis(start: float, step: float, n: int) -> np.ndarray:
    return np.round(start + step * np.arange(n), 6)


def _midnight(d: date) -> datetime:
    return datetime(d.year, d.month, d.day)


def _hours(day: date) -> List[datetime]:
    """Hourly steps from two days before `day` through the following day."""
    start = _midnight(day) - timedelta(days=2)
    return [start + timedelta(hours=h) for h in range(4 * 24)]


class _Fields:
    """Deterministic synthetic predictor fields on the native grid."""

    def __init__(self, seed: int = SEED):
        self.lat = _axis(LAT0, STEP, NATIVE)
        self.lon = _axis(LON0, STEP, NATIVE)
        self.rng = np.random.default_rng(seed)
        y, x = np.meshgrid(np.linspace(0, 1, NATIVE), np.linspace(0, 1, NATIVE), indexing="ij")
        self.y, self.x = y, x
        self.noise = self.rng.standard_normal((NATIVE, NATIVE)) * 0.3

    def dem(self) -> np.ndarray:
        return 150 + 600 * np.exp(-((self.x - 0.6) ** 2 + (self.y - 0.4) ** 2) / 0.08) + 20 * self.noise

    def hourly(self, times: Iterable[datetime], base: float, amp: float, phase: float) -> np.ndarray:
        out = []
        for t in times:
            diurnal = math.sin(2 * math.pi * (t.hour - phase) / 24)
            trend = 0.4 * (t - _midnight(FORECAST_DATE)).total_seconds() / 86400
            out.append(base + amp * diurnal + trend + 3 * self.x - 2 * self.y + self.noise)
        return np.stack(out)

    def daily(self, dates: Iterable[date], base: float) -> np.ndarray:
        return np.stack([
            base + 0.8 * (d - FORECAST_DATE).days + 6 * self.x - 4 * self.y + self.noise for d in dates
        ])


def _grid(name: str, units: str, lat, lon, values, time=None) -> Grid:
    if time is None:
        return Grid(name=name, units=units, lat=lat, lon=lon, values=values)
    return Grid(name=name, units=units, dims=("time", "lat", "lon"), time=time, lat=lat, lon=lon, values=values)


def _write_dataset(root: Path, name: str, grids: Dict[date, Grid], fail: Iterable[date] = ()) -> None:
    folder = root / name
    for d, g in grids.items():
        atomic_write_bytes(folder / f"{d.isoformat()}.opgrid", encode_opgrid(g))
    manifest = {"dates": [d.isoformat() for d in sorted(grids)], "fail": [d.isoformat() for d in fail]}
    atomic_write_bytes(folder / "manifest.json", json.dumps(manifest, indent=2).encode("utf-8"))


def write_fixtures(fixtures: Path, seed: int = SEED) -> Path:
    f = _Fields(seed)
    lat, lon = f.lat, f.lon
    _write_dataset(fixtures, "dem", {STATIC_DATE: _grid("dem", "m", lat, lon, f.dem())})

    hourly = {
        "t2m": ("K", 296.0, 6.0, 9.0),
        "d2m": ("K", 287.0, 2.0, 9.0),
        "u10": ("m s-1", 3.0, 2.0, 14.0),
        "v10": ("m s-1", -1.5, 1.5, 16.0),
    }
    for name, (units, base, amp, phase) in hourly.items():
        grids = {}
        for d in WEATHER_DATES:
            times = _hours(d)
            grids[d] = _grid(name, units, lat, lon, f.hourly(times, base, amp, phase), time=times)
        _write_dataset(fixtures, name, grids)

    lst = {}
    for d in WEATHER_DATES:
        window = [d - timedelta(days=k) for k in range(2, -1, -1)]
        lst[d] = _grid("lst_day", "K", lat, lon, f.daily(window, 306.0), time=[_midnight(x) for x in window])
    _write_dataset(fixtures, "lst_day", lst, fail=[FORECAST_DATE])

    n_lat = _axis(NDVI_LAT0, NDVI_STEP, NDVI_NATIVE)
    n_lon = _axis(NDVI_LON0, NDVI_STEP, NDVI_NATIVE)
    ny, nx = np.meshgrid(np.linspace(0, 1, NDVI_NATIVE), np.linspace(0, 1, NDVI_NATIVE), indexing="ij")
    composites = np.stack([0.35 + 0.3 * ny * (1 - nx) + 0.05 * k for k in range(len(NDVI_COMPOSITES))])
    ndvi = _grid("ndvi", "1", n_lat, n_lon, composites, time=[_midnight(d) for d in NDVI_COMPOSITES])
    _write_dataset(fixtures, "ndvi", {d: ndvi for d in WEATHER_DATES})
    return fixtures


def write_land_cover(path: Path, seed: int = SEED) -> Path:
    f = _Fields(seed)
    classes = np.floor(np.clip(f.x * 4 + f.noise, 0, 3.99)) + 1
    return write_grid_netcdf3(_grid("clc", "1", f.lat, f.lon, classes), path)


def _copy_text(src: Path, dst: Path) -> Path:
    if src.resolve() == dst.resolve():
        return dst
    return atomic_write_bytes(dst, src.read_bytes())


def build_demo(root: Optional[Path] = None, seed: int = SEED) -> DemoPaths:
    """Write the demo tree under `root` (the repository itself by default)."""
    root = Path(root) if root is not None else REPO_ROOT
    pilot_dir = root / "pilots" / "demo"
    library = _copy_text(REPO_ROOT / "datastore.toml", root / "datastore.toml")
    conf = _copy_text(REPO_ROOT / "pilots" / "demo" / "setup.toml", pilot_dir / "setup.toml")

    fixtures = write_fixtures(pilot_dir / "fixtures", seed)
    write_land_cover(pilot_dir / "static" / "clc.nc", seed)

    cfg = ModelConfig(nf=len(FEATURES), days=DAYS, hidden=HIDDEN, kernel=3)
    weights = save_weights(pilot_dir / "weights.opfw", cfg, synthetic_weights(cfg, seed=seed))
    stats = atomic_write_bytes(pilot_dir / "stats.json", (STATS.to_json() + "\n").encode("utf-8"))
    return DemoPaths(root=root, conf=conf, library=library, fixtures=fixtures, weights=weights, stats=stats)
