from __future__ import annotations

from datetime import date
from typing import Dict, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.config import ContingencyPolicy
from models.grid import BBox, Grid


class AvailabilityIndex(BaseModel):
    """Dates a dataset can be served for, strictly ascending."""

    dates: Tuple[date, ...] = Field(
        (),
        description="Available dates.",
        json_schema_extra={"example": ["2024-07-07", "2024-07-08"]},
    )

    model_config = ConfigDict(frozen=True)

    @field_validator("dates", mode="after")
    @classmethod
    def _ascending(cls, v: Tuple[date, ...]) -> Tuple[date, ...]:
        return tuple(sorted(set(v)))

    def __contains__(self, d: object) -> bool:
        return d in self.dates

    def without(self, d: date) -> AvailabilityIndex:
        return AvailabilityIndex(dates=[x for x in self.dates if x != d])


class FetchResult(BaseModel):
    """A fetched grid plus the requested-vs-served record."""

    variable: str
    grid: Grid
    requested: date
    served: date
    fallback: ContingencyPolicy = ContingencyPolicy.NONE

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def provenance(self) -> Dict[str, str]:
        return {
            "fallback": self.fallback.value,
            "requested": self.requested.isoformat(),
            "served": self.served.isoformat(),
        }


class CacheEntry(BaseModel):
    path: str = Field(..., description="Cache file, relative to the cache root.")
    bbox: BBox
    checksum: str = Field(..., description="sha256 of the cached OPGRID bytes.")

    model_config = ConfigDict(frozen=True)


class StaticCache(BaseModel):
    root: str
    entries: Dict[str, CacheEntry] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True)
