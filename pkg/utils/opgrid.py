"""OPGRID snapshot codec.

Layout (all little-endian):

    b"OPGR" | version (1 byte) | header length (uint32) | JSON header | float32 payload

The header carries name, units, dims, coords and the missing sentinel. The same
bytes serve the static cache, snapshots and the mock datastore wire.
"""
from __future__ import annotations

import json
import math
import struct
from datetime import datetime

import numpy as np

from framework.errors import BadMagic, CorruptHeader, GridInvariantError, TruncatedPayload
from models.grid import Grid

MAGIC = b"OPGR"
VERSION = 1
_PREFIX = struct.Struct("<4sBI")
_QUIET_NAN = np.array([0x7FC00000], dtype="<u4").view("<f4")[0]


def _iso(t: datetime) -> str:
    if t.hour == t.minute == t.second == t.microsecond == 0:
        return t.date().isoformat()
    return t.isoformat()


def normalize_nan(values: np.ndarray) -> np.ndarray:
    """Replace every NaN payload with the canonical quiet NaN."""
    out = np.array(values, dtype="<f4", copy=True)
    out[np.isnan(out)] = _QUIET_NAN
    return out


def encode_opgrid(g: Grid) -> bytes:
    if g.values.size == 0:
        raise GridInvariantError(f"grid '{g.name}' holds no values")
    header = {
        "name": g.name,
        "units": g.units,
        "dims": list(g.dims),
        "coords": {
            "time": [_iso(t) for t in g.time],
            "lat": [float(v) for v in g.lat],
            "lon": [float(v) for v in g.lon],
        },
        "missing": None if math.isnan(g.missing) else float(g.missing),
    }
    head = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    payload = normalize_nan(g.values).tobytes(order="C")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + payload


def decode_opgrid(data: bytes) -> Grid:
    if len(data) < _PREFIX.size:
        if not MAGIC.startswith(bytes(data[:4])):
            raise BadMagic(MAGIC, bytes(data[:4]))
        raise TruncatedPayload("OPGRID prefix is incomplete")
    magic, version, head_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(MAGIC, magic)
    if version != VERSION:
        raise BadMagic(MAGIC + bytes([VERSION]), magic + bytes([version]))
    start = _PREFIX.size
    if start + head_len > len(data):
        raise TruncatedPayload(f"header declares {head_len} bytes, {len(data) - start} present")
    try:
        header = json.loads(data[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TruncatedPayload(f"header is not valid JSON: {e}") from e
    if not isinstance(header, dict):
        raise CorruptHeader("OPGRID", "expected a JSON object")

    try:
        coords = header["coords"]
        shape = (len(coords["lat"]), len(coords["lon"]))
        if "time" in header["dims"]:
            shape = (len(coords["time"]),) + shape
    except (KeyError, TypeError) as e:
        raise CorruptHeader("OPGRID", f"missing or malformed {e}") from e
    expected = int(np.prod(shape)) * 4
    payload = data[start + head_len:]
    if len(payload) != expected:
        raise TruncatedPayload(f"payload holds {len(payload)} bytes, header implies {expected}")

    values = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    missing = header.get("missing")
    try:
        return Grid(
            name=header["name"],
            units=header.get("units", ""),
            dims=tuple(header["dims"]),
            time=[datetime.fromisoformat(t) for t in coords["time"]],
            lat=coords["lat"],
            lon=coords["lon"],
            values=values,
            missing=math.nan if missing is None else missing,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptHeader("OPGRID", str(e)) from e
