"""Variable retrieval: remote datastore client, file sources and contingency fallback."""
from __future__ import annotations

import bisect
import logging
import os
import time
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

import httpx

from framework.errors import (
    BadGridFile,
    CodecError,
    DataStoreError,
    FetchFailed,
    FileNotFound,
    NoFallbackDate,
    UnknownComponent,
    UnknownReader,
)
from models.config import ContingencyPolicy, VariableSpec
from models.fetch import AvailabilityIndex, FetchResult
from models.grid import BBox, Grid
from services.grid_ops import crop_bbox
from utils.opgrid import decode_opgrid

logger = logging.getLogger(__name__)

DEFAULT_URL = "http://127.0.0.1:8000"
ATTEMPTS = 3


def datastore_url() -> str:
    return os.environ.get("OPCAST_DATASTORE_URL", DEFAULT_URL)


class DataStore:
    """What the pipeline needs from a data service."""

    def availability(self, dataset: str) -> AvailabilityIndex:
        raise NotImplementedError

    def get(self, dataset: str, day: date, bbox: BBox, params: Optional[Mapping[str, Any]] = None) -> Grid:
        raise NotImplementedError

    def close(self) -> None:
        pass


class RemoteDataStore(DataStore):
    """HTTP client of the datastore API (JSON availability, OPGRID payloads).

    Transport errors and 5xx answers are retried up to ATTEMPTS times; 4xx
    answers fail at once.
    """

    def __init__(self, client: Optional[httpx.Client] = None, base_url: Optional[str] = None, attempts: int = ATTEMPTS):
        self._owned = client is None
        self.client = client or httpx.Client(base_url=base_url or datastore_url(), timeout=30.0)
        self.attempts = attempts

    def _request(self, path: str, params: Mapping[str, Any]) -> httpx.Response:
        last = ""
        for attempt in range(1, self.attempts + 1):
            try:
                resp = self.client.get(path, params=dict(params))
            except httpx.TransportError as e:
                last = f"transport error: {e}"
            else:
                if resp.status_code < 400:
                    return resp
                last = f"HTTP {resp.status_code}"
                if resp.status_code < 500:
                    break
            logger.debug("request failed", extra={"fields": {"path": path, "attempt": attempt, "reason": last}})
        raise DataStoreError(f"GET {path} failed: {last}")

    def availability(self, dataset: str) -> AvailabilityIndex:
        resp = self._request(f"/datasets/{dataset}/availability", {})
        try:
            return AvailabilityIndex(**resp.json())
        except (ValueError, TypeError) as e:
            raise DataStoreError(f"availability of '{dataset}' is malformed: {e}") from e

    def get(self, dataset: str, day: date, bbox: BBox, params: Optional[Mapping[str, Any]] = None) -> Grid:
        query = {k: str(v) for k, v in sorted((params or {}).items())}
        query.update(date=day.isoformat(), bbox=bbox.to_query())
        resp = self._request(f"/datasets/{dataset}/data", query)
        return decode_opgrid(resp.content)

    def close(self) -> None:
        if self._owned:
            self.client.close()


DATASTORE_CLASSES: Dict[str, Callable[..., DataStore]] = {"remote": RemoteDataStore}


def datastore_for(datastore_class: str, **kwargs) -> DataStore:
    try:
        factory = DATASTORE_CLASSES[datastore_class]
    except KeyError as e:
        raise UnknownComponent("datastore class", datastore_class) from e
    return factory(**kwargs)


# -----------------------------------------------------------------------------
# Contingency
# -----------------------------------------------------------------------------
def one_year_back(d: date) -> date:
    try:
        return d.replace(year=d.year - 1)
    except ValueError:
        # Feb 29 -> Feb 28
        return d.replace(year=d.year - 1, day=28)


def apply_contingency(policy: ContingencyPolicy, requested: date, index: AvailabilityIndex) -> date:
    """Pick the date to serve instead of `requested`."""
    policy = ContingencyPolicy(policy)
    if policy is ContingencyPolicy.LATEST_DATE:
        k = bisect.bisect_left(index.dates, requested)
        if k == 0:
            raise NoFallbackDate(f"no available date before {requested.isoformat()}")
        return index.dates[k - 1]
    if policy is ContingencyPolicy.PRECEDING_YEAR:
        prior = one_year_back(requested)
        if prior not in index:
            raise NoFallbackDate(f"{prior.isoformat()} is not available")
        return prior
    raise NoFallbackDate("contingency policy is none")


def _shift_time(g: Grid, delta: timedelta) -> Grid:
    if not g.is_temporal or not delta:
        return g
    return g.replace(time=[t + delta for t in g.time])


# -----------------------------------------------------------------------------
# File sources
# -----------------------------------------------------------------------------
def _read_opgrid(path: Path) -> Grid:
    return decode_opgrid(path.read_bytes())


def _read_netcdf(path: Path) -> Grid:
    from services.output import read_grid_netcdf3

    return read_grid_netcdf3(path)


READERS: Dict[str, Callable[[Path], Grid]] = {"netcdf": _read_netcdf, "opgrid": _read_opgrid}


def fetch_from_file(spec: VariableSpec, bbox: BBox, base_dir: Optional[Path] = None) -> Grid:
    g = spec.gathering
    reader = READERS.get(g.open_with or "")
    if reader is None:
        raise UnknownReader(g.open_with or "")
    path = Path(g.path or "")
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise FileNotFound(str(path))
    try:
        grid = reader(path)
    except (CodecError, KeyError, ValueError, IndexError) as e:
        raise BadGridFile(f"{path}: {e}") from e
    return crop_bbox(grid, bbox)


# -----------------------------------------------------------------------------
# fetch_variable
# -----------------------------------------------------------------------------
def _log_fetch(result: FetchResult, started: float) -> None:
    logger.info(
        "fetched",
        extra={"fields": {
            "stage": "fetch",
            "variable": result.variable,
            "requested": result.requested.isoformat(),
            "served": result.served.isoformat(),
            "fallback": result.fallback.value,
            "elapsed_ms": round((time.perf_counter() - started) * 1000, 3),
        }},
    )


def fetch_variable(
    spec: VariableSpec,
    day: date,
    bbox: BBox,
    store: DataStore,
    variable: str = "",
    base_dir: Optional[Path] = None,
) -> FetchResult:
    """Fetch one variable for `day`, falling back per its contingency policy.

    Statics are served at the latest available date on or before `day`. A
    preceding-year fallback relabels the time axis onto the requested period.
    """
    started = time.perf_counter()
    g = spec.gathering
    variable = variable or g.dataset

    if g.source == "file":
        result = FetchResult(variable=variable, grid=fetch_from_file(spec, bbox, base_dir), requested=day, served=day)
        _log_fetch(result, started)
        return result

    try:
        index = store.availability(g.dataset)
    except (DataStoreError, CodecError) as e:
        raise FetchFailed(variable, day, str(e)) from e

    if spec.static:
        k = bisect.bisect_right(index.dates, day)
        if k == 0:
            raise FetchFailed(variable, day, "no static grid available")
        try:
            served = index.dates[k - 1]
            grid = store.get(g.dataset, served, bbox, g.request_params)
        except (DataStoreError, CodecError) as e:
            raise FetchFailed(variable, day, str(e)) from e
        result = FetchResult(variable=variable, grid=crop_bbox(grid, bbox), requested=day, served=served)
        _log_fetch(result, started)
        return result

    reason = "date not available"
    if day in index:
        try:
            grid = store.get(g.dataset, day, bbox, g.request_params)
        except (DataStoreError, CodecError) as e:
            reason = str(e)
        else:
            result = FetchResult(variable=variable, grid=crop_bbox(grid, bbox), requested=day, served=day)
            _log_fetch(result, started)
            return result

    if spec.contingency is ContingencyPolicy.NONE:
        raise FetchFailed(variable, day, reason)
    logger.warning(
        "primary fetch failed",
        extra={"fields": {"stage": "fetch", "variable": variable, "reason": reason, "policy": spec.contingency.value}},
    )
    try:
        served = apply_contingency(spec.contingency, day, index.without(day))
        grid = store.get(g.dataset, served, bbox, g.request_params)
    except (DataStoreError, CodecError) as e:
        raise FetchFailed(variable, day, f"{reason}; fallback failed: {e}") from e

    if spec.contingency is ContingencyPolicy.PRECEDING_YEAR:
        grid = _shift_time(grid, datetime(day.year, day.month, day.day) - datetime(served.year, served.month, served.day))
    result = FetchResult(
        variable=variable,
        grid=crop_bbox(grid, bbox),
        requested=day,
        served=served,
        fallback=spec.contingency,
    )
    _log_fetch(result, started)
    return result
