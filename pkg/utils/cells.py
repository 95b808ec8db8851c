"""Pixel-cell geometry for gridded GeoJSON output."""
from __future__ import annotations

from typing import Any, Dict, Iterable, List, Optional

import geojson
import numpy as np

DECIMALS = 6
# half-width used when an axis has a single coordinate
SINGLE_CELL_SPACING = 0.01


def cell_edges(coords: np.ndarray) -> np.ndarray:
    """n + 1 edges: midpoints between neighbours, half a spacing beyond each border."""
    c = np.asarray(coords, dtype=np.float64)
    if c.size == 1:
        return np.array([c[0] - SINGLE_CELL_SPACING / 2, c[0] + SINGLE_CELL_SPACING / 2])
    mid = (c[:-1] + c[1:]) / 2
    return np.concatenate([[c[0] - (c[1] - c[0]) / 2], mid, [c[-1] + (c[-1] - c[-2]) / 2]])


def cell_polygon(west: float, south: float, east: float, north: float) -> geojson.Polygon:
    """Closed counter-clockwise ring in (lon, lat) order."""
    ring = [[west, south], [east, south], [east, north], [west, north], [west, south]]
    return geojson.Polygon([[[round(x, DECIMALS), round(y, DECIMALS)] for x, y in ring]], precision=DECIMALS)


def grid_features(
    lat: np.ndarray,
    lon: np.ndarray,
    properties: Iterable[Optional[Dict[str, Any]]],
) -> List[geojson.Feature]:
    """One feature per cell, row-major (lat then lon); a None properties entry skips the cell."""
    lat_e = cell_edges(lat)
    lon_e = cell_edges(lon)
    props = iter(properties)
    features = []
    for i in range(len(lat)):
        for j in range(len(lon)):
            p = next(props)
            if p is None:
                continue
            poly = cell_polygon(float(lon_e[j]), float(lat_e[i]), float(lon_e[j + 1]), float(lat_e[i + 1]))
            features.append(geojson.Feature(geometry=poly, properties=p))
    return features


def dumps(collection: geojson.FeatureCollection) -> str:
    return geojson.dumps(collection, sort_keys=True, separators=(",", ":"))
