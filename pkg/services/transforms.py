"""Transform library of the FDI use case and the named registry that exposes it.

A registered transform is called as ``fn(input, env, **kwargs) -> Grid``; the
kwargs names are the keys written in the datastore TOML.
"""
from __future__ import annotations

import bisect
import math
from datetime import date, datetime
from typing import TYPE_CHECKING, Callable, Dict, Iterable, Optional, Sequence

import numpy as np

from framework.errors import (
    DuplicateTransform,
    GridMismatch,
    MissingDEM,
    NoPriorObservation,
    NotHourly,
    UnknownComponent,
    UnknownFeature,
    UnknownTransform,
)
from models.grid import Grid
from models.stats import ScalingStats

if TYPE_CHECKING:
    from services.cascade import PipelineEnv

Transform = Callable[..., Grid]

METERS_PER_DEGREE = 111320.0
MAGNUS_A = 17.625
MAGNUS_B = 243.04


class TransformRegistry:
    def __init__(self, name: str = "custom"):
        self.name = name
        self._entries: Dict[str, Transform] = {}
        self._frozen = False

    def register(self, name: str, fn: Optional[Transform] = None):
        """Register `fn` under `name`; usable as a decorator when fn is omitted."""
        def add(f: Transform) -> Transform:
            if self._frozen:
                raise RuntimeError(f"registry '{self.name}' is frozen")
            if name in self._entries:
                raise DuplicateTransform(name)
            self._entries[name] = f
            return f

        return add(fn) if fn is not None else add

    def get(self, name: str, position: Optional[int] = None) -> Transform:
        try:
            return self._entries[name]
        except KeyError as e:
            raise UnknownTransform(name, position) from e

    def freeze(self) -> TransformRegistry:
        self._frozen = True
        return self

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def names(self) -> Iterable[str]:
        return sorted(self._entries)


# -----------------------------------------------------------------------------
# Grid-level functions
# -----------------------------------------------------------------------------
def _require_same(a: Grid, b: Grid) -> None:
    if not a.same_space(b) or a.dims != b.dims or a.time != b.time:
        raise GridMismatch(b.name, f"coordinates differ from '{a.name}'")


def wind_speed_from_uv(u: Grid, v: Grid) -> Grid:
    _require_same(u, v)
    speed = np.hypot(u.values.astype(np.float64), v.values.astype(np.float64))
    return u.replace(name="sfcWind", units="m s-1", values=speed)


def daily_aggregate(g: Grid, mode: str = "max") -> Grid:
    """Reduce an hourly series to one value per UTC calendar day."""
    if not g.is_temporal or any(t.minute or t.second or t.microsecond for t in g.time):
        raise NotHourly(g.name)
    if mode not in ("max", "min"):
        raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
    g = g.with_nan_missing()
    reduce = np.fmax.reduce if mode == "max" else np.fmin.reduce
    hours: Dict[date, list] = {}
    for k, t in enumerate(g.time):
        hours.setdefault(t.date(), []).append(k)
    days = sorted(hours)
    values = np.stack([reduce(g.values[hours[d]], axis=0) for d in days]) if days else g.values[:0]
    return g.replace(time=[datetime(d.year, d.month, d.day) for d in days], values=values)


def fill_time_dimension(g: Grid, dates: Sequence[date]) -> Grid:
    """Forward fill: each date takes the latest observation on or before it."""
    if not g.is_temporal:
        raise GridMismatch(g.name, "fill_time_dimension needs a time dimension")
    observed = g.dates
    picks = []
    for d in dates:
        k = bisect.bisect_right(observed, d) - 1
        if k < 0:
            raise NoPriorObservation(d)
        picks.append(k)
    return g.replace(time=[datetime(d.year, d.month, d.day) for d in dates], values=g.values[picks])


def _spacing(coords: np.ndarray) -> float:
    return float(np.mean(np.diff(coords))) if coords.size > 1 else 1.0


def compute_slope(dem: Grid) -> Grid:
    """Slope in degrees with Horn's 3x3 stencil; borders use edge replication."""
    if dem.is_temporal:
        raise GridMismatch(dem.name, "DEM must be static")
    z = np.pad(dem.values.astype(np.float64), 1, mode="edge")
    a, b, c = z[:-2, :-2], z[:-2, 1:-1], z[:-2, 2:]
    d, f = z[1:-1, :-2], z[1:-1, 2:]
    g, h, i = z[2:, :-2], z[2:, 1:-1], z[2:, 2:]

    dx = METERS_PER_DEGREE * np.cos(np.radians(dem.lat))[:, None] * _spacing(dem.lon)
    dy = METERS_PER_DEGREE * _spacing(dem.lat)
    p = ((c + 2 * f + i) - (a + 2 * d + g)) / (8.0 * dx)
    q = ((g + 2 * h + i) - (a + 2 * b + c)) / (8.0 * dy)
    slope = np.degrees(np.arctan(np.hypot(p, q)))
    return dem.replace(name="slope", units="degree", values=slope)


def relative_humidity(t2m: Grid, d2m: Grid) -> Grid:
    """Relative humidity (%) from 2 m air and dew-point temperature in kelvin (Magnus)."""
    _require_same(t2m, d2m)
    t = t2m.values.astype(np.float64) - 273.15
    td = d2m.values.astype(np.float64) - 273.15
    rh = 100.0 * np.exp(MAGNUS_A * td / (MAGNUS_B + td)) / np.exp(MAGNUS_A * t / (MAGNUS_B + t))
    return t2m.replace(name="hurs", units="%", values=np.clip(rh, 0.0, 100.0))


def standardize(g: Grid, stats: ScalingStats, feature: str) -> Grid:
    """(F - mean) / std with training moments; missing cells take the feature fill (0 by default)."""
    s = stats[feature]
    scaled = (g.values.astype(np.float64) - s.mean) / s.std
    scaled = np.where(g.missing_mask, s.fill, scaled)
    return g.replace(units="1", values=scaled, missing=math.nan)


def destandardize(g: Grid, stats: ScalingStats, feature: str, units: str = "") -> Grid:
    s = stats[feature]
    return g.replace(units=units, values=g.values.astype(np.float64) * s.std + s.mean)


def kelvin_to_celsius(g: Grid) -> Grid:
    return g.replace(units="degC", values=g.values.astype(np.float64) - 273.15)


# -----------------------------------------------------------------------------
# Registry adapters
# -----------------------------------------------------------------------------
def _wind_speed_step(input: Grid, env: PipelineEnv, variable: Grid) -> Grid:
    return wind_speed_from_uv(input, variable)


def _daily_aggregate_step(input: Grid, env: PipelineEnv, mode: str = "max") -> Grid:
    return daily_aggregate(input, mode)


def _fill_time_step(input: Grid, env: PipelineEnv, dates: Sequence[date]) -> Grid:
    return fill_time_dimension(input, dates)


def _slope_step(input: Optional[Grid], env: PipelineEnv, variable: Optional[Grid] = None) -> Grid:
    dem = variable if variable is not None else input
    if dem is None:
        raise MissingDEM()
    return compute_slope(dem)


def _rh_step(input: Grid, env: PipelineEnv, variable: Grid) -> Grid:
    return relative_humidity(input, variable)


def _standardize_step(
    input: Grid,
    env: PipelineEnv,
    feature: str,
    stats: Optional[ScalingStats] = None,
) -> Grid:
    stats = stats if stats is not None else env.context.get("stats")
    if stats is None:
        raise UnknownFeature(feature)
    return standardize(input, stats, feature)


def _kelvin_step(input: Grid, env: PipelineEnv) -> Grid:
    return kelvin_to_celsius(input)


def _rename_step(input: Grid, env: PipelineEnv, name: Optional[str] = None, units: Optional[str] = None) -> Grid:
    return input.replace(name=name or input.name, units=input.units if units is None else units)


def fdi_registry() -> TransformRegistry:
    """The transform library used by the fire danger pilots."""
    registry = TransformRegistry("fdi")
    registry.register("wind_speed_from_uv", _wind_speed_step)
    registry.register("daily_aggregate", _daily_aggregate_step)
    registry.register("fill_time_dimension", _fill_time_step)
    registry.register("compute_slope", _slope_step)
    registry.register("relative_humidity", _rh_step)
    registry.register("standardize", _standardize_step)
    registry.register("kelvin_to_celsius", _kelvin_step)
    registry.register("rename", _rename_step)
    return registry


REGISTRY_FACTORIES: Dict[str, Callable[[], TransformRegistry]] = {"fdi": fdi_registry}


def registry_for(processing_class: str) -> TransformRegistry:
    """Build the frozen registry a pilot's `processing_class` names."""
    try:
        factory = REGISTRY_FACTORIES[processing_class]
    except KeyError as e:
        raise UnknownComponent("processing class", processing_class) from e
    return factory().freeze()
