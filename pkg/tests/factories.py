from datetime import date, datetime, timedelta
from typing import Optional, Sequence

import numpy as np

from models.grid import Grid


def axis(start: float, step: float, n: int) -> np.ndarray:
    return np.round(start + step * np.arange(n), 6)


def make_grid(
    values,
    name: str = "g",
    units: str = "",
    lat: Optional[Sequence[float]] = None,
    lon: Optional[Sequence[float]] = None,
    time: Optional[Sequence[datetime]] = None,
) -> Grid:
    values = np.asarray(values, dtype=np.float32)
    h, w = values.shape[-2:]
    lat = axis(40.0, 0.1, h) if lat is None else lat
    lon = axis(10.0, 0.1, w) if lon is None else lon
    if time is None and values.ndim == 2:
        return Grid(name=name, units=units, lat=lat, lon=lon, values=values)
    if time is None:
        time = daily(date(2024, 7, 1), values.shape[0])
    return Grid(name=name, units=units, dims=("time", "lat", "lon"), time=time, lat=lat, lon=lon, values=values)


def daily(start: date, n: int):
    return [datetime(start.year, start.month, start.day) + timedelta(days=k) for k in range(n)]


def hourly(start: date, n: int):
    return [datetime(start.year, start.month, start.day) + timedelta(hours=k) for k in range(n)]
