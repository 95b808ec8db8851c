from __future__ import annotations

from datetime import date, datetime
from typing import Mapping, Optional, Sequence

import numpy as np

from framework.errors import EmptyCrop, GridMismatch, MissingDate
from models.grid import BBox, Grid, SampleTensor


def crop_bbox(g: Grid, b: BBox) -> Grid:
    """Keep the coordinates inside [min, max] (inclusive); no interpolation."""
    lat_mask = (g.lat >= b.lat_min) & (g.lat <= b.lat_max)
    lon_mask = (g.lon >= b.lon_min) & (g.lon <= b.lon_max)
    if not lat_mask.any() or not lon_mask.any():
        raise EmptyCrop(g.name)
    values = g.values[..., lat_mask, :][..., lon_mask]
    return g.replace(lat=g.lat[lat_mask], lon=g.lon[lon_mask], values=values)


def _nearest_index(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    # ties go to the smaller coordinate
    hi = np.clip(np.searchsorted(source, target, side="left"), 0, source.size - 1)
    lo = np.clip(hi - 1, 0, source.size - 1)
    take_lo = np.abs(target - source[lo]) <= np.abs(source[hi] - target)
    return np.where(take_lo, lo, hi)


def regrid_nearest(g: Grid, target_lat: Sequence[float], target_lon: Sequence[float]) -> Grid:
    """Nearest-neighbour regrid in degree space.

    On a rectilinear grid the Euclidean nearest cell is the pair of per-axis
    nearest indices, so each axis is resolved independently.
    """
    t_lat = np.asarray(target_lat, dtype=np.float64)
    t_lon = np.asarray(target_lon, dtype=np.float64)
    i = _nearest_index(g.lat, t_lat)
    j = _nearest_index(g.lon, t_lon)
    values = g.values[..., i, :][..., j]
    return g.replace(lat=t_lat, lon=t_lon, values=values)


def _midnight(d: date) -> datetime:
    return datetime(d.year, d.month, d.day)


def align_time(g: Grid, dates: Sequence[date]) -> Grid:
    """Select `dates` from a time-bearing grid, matching on calendar date."""
    if not g.is_temporal:
        raise GridMismatch(g.name, "align_time needs a time dimension")
    index = {t.date(): k for k, t in enumerate(g.time)}
    picks = []
    for d in dates:
        if d not in index:
            raise MissingDate(d, g.name)
        picks.append(index[d])
    return g.replace(time=[_midnight(d) for d in dates], values=g.values[picks])


def stack_sample(
    grids: Sequence[Grid],
    dates: Sequence[date],
    fill: Optional[Mapping[str, float]] = None,
) -> SampleTensor:
    """Assemble the (nf, days, h, w) model input.

    Static grids are broadcast along days; remaining missing values take the
    feature's fill value (0.0, i.e. the scaled mean, unless `fill` says otherwise).
    """
    if not grids:
        raise GridMismatch("<sample>", "no grids to stack")
    fill = fill or {}
    first = grids[0]
    h, w = first.lat.size, first.lon.size
    out = np.empty((len(grids), len(dates), h, w), dtype=np.float32)
    for f, g in enumerate(grids):
        if not g.same_space(first):
            raise GridMismatch(g.name, f"lat/lon differ from '{first.name}'")
        if g.is_temporal:
            block = align_time(g, dates).values
        else:
            block = np.broadcast_to(g.values, (len(dates), h, w))
        missing = np.isnan(block) | (block == np.float32(g.missing))
        block = np.where(missing, np.float32(fill.get(g.name, 0.0)), block)
        out[f] = block
    return SampleTensor(
        values=out,
        features=tuple(g.name for g in grids),
        dates=tuple(dates),
        lat=first.lat,
        lon=first.lon,
    )
