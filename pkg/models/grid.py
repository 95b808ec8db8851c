from __future__ import annotations

import math
from datetime import date, datetime
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from framework.errors import BadBBox, GridInvariantError

DIM_ORDERS = {("lat", "lon"), ("time", "lat", "lon")}


class BBox(BaseModel):
    """Geographic bounding box in degrees."""

    lat_min: float = Field(..., description="Southern edge (degrees north).", json_schema_extra={"example": 41.5})
    lat_max: float = Field(..., description="Northern edge (degrees north).", json_schema_extra={"example": 42.0})
    lon_min: float = Field(..., description="Western edge (degrees east).", json_schema_extra={"example": 15.5})
    lon_max: float = Field(..., description="Eastern edge (degrees east).", json_schema_extra={"example": 16.2})

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _ordered(self) -> BBox:
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise BadBBox()
        return self

    def to_query(self) -> str:
        return f"{self.lat_min!r},{self.lon_min!r},{self.lat_max!r},{self.lon_max!r}"

    @classmethod
    def from_query(cls, text: str) -> BBox:
        """Parse the `latmin,lonmin,latmax,lonmax` wire form."""
        parts = text.split(",")
        if len(parts) != 4:
            raise BadBBox(f"expected 4 comma-separated numbers, got {text!r}")
        try:
            lat_min, lon_min, lat_max, lon_max = (float(p) for p in parts)
        except ValueError as e:
            raise BadBBox(str(e)) from e
        return cls(lat_min=lat_min, lat_max=lat_max, lon_min=lon_min, lon_max=lon_max)


def _as_timestamp(value) -> datetime:
    if isinstance(value, datetime):
        return value.replace(tzinfo=None)
    if isinstance(value, date):
        return datetime(value.year, value.month, value.day)
    return datetime.fromisoformat(str(value)).replace(tzinfo=None)


class Grid(BaseModel):
    """A named, unit-carrying float32 array over (time?, lat, lon)."""

    name: str = Field(..., description="Variable name.", json_schema_extra={"example": "t2m"})
    units: str = Field("", description="Physical units.", json_schema_extra={"example": "K"})
    dims: Tuple[str, ...] = Field(("lat", "lon"), description="Dimension order.")
    time: Tuple[datetime, ...] = Field((), description="Ascending timestamps (daily grids use midnight).")
    lat: np.ndarray = Field(..., description="Strictly ascending latitudes.")
    lon: np.ndarray = Field(..., description="Strictly ascending longitudes.")
    values: np.ndarray = Field(..., description="float32 values in dim order.")
    missing: float = Field(math.nan, description="Missing-value sentinel.")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("dims", mode="before")
    @classmethod
    def _dims(cls, v):
        v = tuple(v)
        if v not in DIM_ORDERS:
            raise GridInvariantError(f"dims must be (lat, lon) or (time, lat, lon), got {v}")
        return v

    @field_validator("time", mode="before")
    @classmethod
    def _time(cls, v):
        return tuple(_as_timestamp(t) for t in v)

    @field_validator("lat", "lon", mode="before")
    @classmethod
    def _coord(cls, v):
        arr = np.array(v, dtype=np.float64).reshape(-1)
        if arr.size > 1 and not np.all(np.diff(arr) > 0):
            raise GridInvariantError("lat/lon coordinates must be strictly ascending")
        arr.setflags(write=False)
        return arr

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        arr = np.array(v, dtype=np.float32)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _shape(self) -> Grid:
        if "time" in self.dims:
            if any(b <= a for a, b in zip(self.time, self.time[1:])):
                raise GridInvariantError("time coordinates must be strictly ascending")
        elif self.time:
            raise GridInvariantError("a static grid carries no time coordinates")
        if self.values.shape != self.shape:
            raise GridInvariantError(
                f"values shape {self.values.shape} does not match coordinates {self.shape}"
            )
        return self

    @property
    def shape(self) -> Tuple[int, ...]:
        spatial = (self.lat.size, self.lon.size)
        return (len(self.time),) + spatial if self.is_temporal else spatial

    @property
    def is_temporal(self) -> bool:
        return "time" in self.dims

    @property
    def dates(self) -> List[date]:
        return [t.date() for t in self.time]

    @property
    def missing_mask(self) -> np.ndarray:
        """True where a cell is NaN or holds the missing sentinel."""
        mask = np.isnan(self.values)
        if not math.isnan(self.missing):
            mask |= self.values == np.float32(self.missing)
        return mask

    def with_nan_missing(self) -> Grid:
        """Copy whose missing cells are NaN and whose sentinel is NaN."""
        if math.isnan(self.missing):
            return self
        return self.replace(values=np.where(self.missing_mask, np.nan, self.values), missing=math.nan)

    def same_space(self, other: Grid) -> bool:
        return np.array_equal(self.lat, other.lat) and np.array_equal(self.lon, other.lon)

    def replace(self, **changes) -> Grid:
        """Validated copy with some fields changed."""
        fields = {
            "name": self.name,
            "units": self.units,
            "dims": self.dims,
            "time": self.time,
            "lat": self.lat,
            "lon": self.lon,
            "values": self.values,
            "missing": self.missing,
        }
        fields.update(changes)
        return Grid(**fields)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        same_missing = (math.isnan(self.missing) and math.isnan(other.missing)) or self.missing == other.missing
        return (
            self.name == other.name
            and self.units == other.units
            and self.dims == other.dims
            and self.time == other.time
            and self.same_space(other)
            and same_missing
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None  # type: ignore[assignment]


class SampleTensor(BaseModel):
    """Model input ordered (nf, days, h, w)."""

    values: np.ndarray = Field(..., description="float32 tensor (nf, days, h, w).")
    features: Tuple[str, ...] = Field(..., description="Feature order along axis 0.")
    dates: Tuple[date, ...] = Field(..., description="Dates along axis 1.")
    lat: np.ndarray = Field(..., description="Latitudes along axis 2.")
    lon: np.ndarray = Field(..., description="Longitudes along axis 3.")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        arr = np.array(v, dtype=np.float32)
        arr.setflags(write=False)
        return arr

    @field_validator("lat", "lon", mode="before")
    @classmethod
    def _coord(cls, v):
        arr = np.array(v, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _shape(self) -> SampleTensor:
        expected = (len(self.features), len(self.dates), self.lat.size, self.lon.size)
        if self.values.shape != expected:
            raise GridInvariantError(f"sample shape {self.values.shape} != {expected}")
        return self

    __hash__ = None  # type: ignore[assignment]
