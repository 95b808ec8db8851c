from __future__ import annotations

import json
from datetime import date
from pathlib import Path
from typing import Dict, List

from fastapi import APIRouter, HTTPException, Path as PathParam, Query, Request, Response
from pydantic import BaseModel, Field, ValidationError

from framework.errors import BadBBox, BadFixture, CodecError, EmptyCrop
from models.fetch import AvailabilityIndex
from models.grid import BBox
from services.grid_ops import crop_bbox
from utils.opgrid import decode_opgrid, encode_opgrid

MANIFEST = "manifest.json"
OPGRID_MEDIA_TYPE = "application/octet-stream"


class FixtureDataset(BaseModel):
    """One dataset directory: ``manifest.json`` plus ``<YYYY-MM-DD>.opgrid`` per date."""

    name: str
    root: Path
    dates: List[date] = Field(default_factory=list, json_schema_extra={"example": ["2024-07-08", "2024-07-09"]})
    fail: List[date] = Field(default_factory=list, description="Dates answered with HTTP 503.")

    def file_for(self, day: date) -> Path:
        return self.root / f"{day.isoformat()}.opgrid"


def load_fixture(fixture_dir: Path) -> Dict[str, FixtureDataset]:
    fixture_dir = Path(fixture_dir)
    if not fixture_dir.is_dir():
        raise BadFixture(f"{fixture_dir} is not a directory")
    datasets: Dict[str, FixtureDataset] = {}
    for folder in sorted(p for p in fixture_dir.iterdir() if p.is_dir()):
        manifest = folder / MANIFEST
        if not manifest.is_file():
            raise BadFixture(f"{folder.name}: missing {MANIFEST}")
        try:
            raw = json.loads(manifest.read_text())
            ds = FixtureDataset(name=folder.name, root=folder, dates=raw.get("dates", []), fail=raw.get("fail", []))
        except (ValueError, ValidationError) as e:
            raise BadFixture(f"{folder.name}: {e}") from e
        for d in ds.dates:
            if not ds.file_for(d).is_file():
                raise BadFixture(f"{folder.name}: no grid file for {d.isoformat()}")
        datasets[ds.name] = ds
    return datasets


router = APIRouter(prefix="/datasets", tags=["datasets"])


def _dataset(request: Request, name: str) -> FixtureDataset:
    ds = request.app.state.datasets.get(name)
    if ds is None:
        raise HTTPException(status_code=404, detail=f"Dataset '{name}' not found")
    return ds


@router.get("", response_model=List[str])
def list_datasets(request: Request):
    return sorted(request.app.state.datasets)


@router.get("/{name}/availability", response_model=AvailabilityIndex)
def get_availability(request: Request, name: str = PathParam(..., description="Dataset identifier")):
    return AvailabilityIndex(dates=_dataset(request, name).dates)


@router.get("/{name}/data")
def get_data(
    request: Request,
    name: str = PathParam(..., description="Dataset identifier"),
    date_: str = Query(..., alias="date", description="YYYY-MM-DD"),
    bbox: str | None = Query(None, description="latmin,lonmin,latmax,lonmax"),
):
    ds = _dataset(request, name)
    try:
        day = date.fromisoformat(date_)
    except ValueError:
        raise HTTPException(status_code=400, detail=f"Malformed date '{date_}'")
    if day not in ds.dates:
        raise HTTPException(status_code=404, detail=f"No data for '{name}' on {day.isoformat()}")

    payload = ds.file_for(day).read_bytes()
    if bbox is None:
        return Response(content=payload, media_type=OPGRID_MEDIA_TYPE)
    try:
        region = BBox.from_query(bbox)
    except BadBBox as e:
        raise HTTPException(status_code=400, detail=str(e))
    try:
        grid = crop_bbox(decode_opgrid(payload), region)
    except EmptyCrop as e:
        raise HTTPException(status_code=404, detail=str(e))
    except CodecError as e:
        raise HTTPException(status_code=500, detail=str(e))
    return Response(content=encode_opgrid(grid), media_type=OPGRID_MEDIA_TYPE)
