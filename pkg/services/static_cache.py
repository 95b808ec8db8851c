"""Per-pilot cache of fully transformed static variables.

Layout: ``<cache root>/<pilot>/<variable>.opgrid`` plus ``cache.json`` mapping
each variable to its file, bbox and sha256.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from datetime import date
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from framework.errors import CodecError
from models.config import DataStoreConfig, PilotConfig
from models.fetch import CacheEntry, StaticCache
from models.grid import BBox, Grid
from services.cascade import PipelineEnv, transform_variable
from services.datastore import DataStore, fetch_variable
from services.transforms import TransformRegistry
from utils.atomic import atomic_write_bytes
from utils.opgrid import decode_opgrid, encode_opgrid

logger = logging.getLogger(__name__)

CACHE_INDEX = "cache.json"


def cache_root(pilot: PilotConfig) -> Path:
    env = os.environ.get("OPCAST_CACHE_DIR")
    return Path(env) if env else pilot.base_dir / "cache"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_static_cache(root: Path, pilot_name: str) -> StaticCache:
    folder = Path(root) / pilot_name
    index = folder / CACHE_INDEX
    entries: Dict[str, CacheEntry] = {}
    if index.is_file():
        try:
            raw = json.loads(index.read_text())
            entries = {k: CacheEntry(**v) for k, v in raw.get("entries", {}).items()}
        except (ValueError, TypeError) as e:
            logger.warning("ignoring unreadable cache index", extra={"fields": {"path": str(index), "error": str(e)}})
    return StaticCache(root=str(folder), entries=entries)


def cached_grid(cache: StaticCache, name: str, bbox: BBox) -> Optional[Grid]:
    """The cached grid, or None unless the bbox matches exactly and the checksum holds."""
    entry = cache.entries.get(name)
    if entry is None or entry.bbox != bbox:
        return None
    path = Path(cache.root) / entry.path
    if not path.is_file():
        return None
    data = path.read_bytes()
    if sha256(data) != entry.checksum:
        return None
    try:
        return decode_opgrid(data)
    except CodecError:
        return None


def _write_index(folder: Path, pilot_name: str, entries: Mapping[str, CacheEntry]) -> None:
    doc = {"pilot": pilot_name, "entries": {k: v.model_dump(mode="json") for k, v in entries.items()}}
    atomic_write_bytes(folder / CACHE_INDEX, json.dumps(doc, indent=2, sort_keys=True).encode("utf-8"))


def prepare_static(
    pilot: PilotConfig,
    library: DataStoreConfig,
    store: DataStore,
    registry: TransformRegistry,
    day: date,
    context: Optional[Mapping[str, Any]] = None,
    root: Optional[Path] = None,
    target: Optional[Grid] = None,
) -> StaticCache:
    """Fetch, transform and cache every static pilot variable.

    Valid cache entries are reused without touching the datastore, so a second
    call with an unchanged bbox does no network traffic and rewrites nothing.
    """
    root = Path(root) if root is not None else cache_root(pilot)
    cache = load_static_cache(root, pilot.name)
    folder = Path(cache.root)
    entries = dict(cache.entries)
    env = PipelineEnv(context, pilot.locals)
    first = pilot.variables[0]
    written = False

    for name in (v for v in pilot.variables if library.variables[v].static):
        hit = cached_grid(cache, name, pilot.bbox)
        if hit is not None:
            env.consume(name, hit)
            if name == first and target is None:
                target = hit
            logger.info("static cache hit", extra={"fields": {"stage": "static", "variable": name}})
            continue

        spec = library.variables[name]
        fetched = fetch_variable(spec, day, pilot.bbox, store, name, base_dir=pilot.base_dir)
        if target is None:
            if name == first:
                target = fetched.grid
            else:
                target = fetch_variable(library.variables[first], day, pilot.bbox, store, first, pilot.base_dir).grid
        grid = transform_variable(name, spec, fetched.grid, env, registry, pilot.bbox, target)
        data = encode_opgrid(grid)
        rel = f"{name}.opgrid"
        atomic_write_bytes(folder / rel, data)
        entries[name] = CacheEntry(path=rel, bbox=pilot.bbox, checksum=sha256(data))
        written = True
        logger.info("static cached", extra={"fields": {"stage": "static", "variable": name, "path": str(folder / rel)}})

    if written:
        _write_index(folder, pilot.name, entries)
    return StaticCache(root=str(folder), entries=entries)
