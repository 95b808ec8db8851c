from __future__ import annotations

import logging
import time
from types import MappingProxyType
from typing import Any, Dict, Mapping, Optional

from framework.errors import OpcastError, TransformFailed
from models.config import TransformSpec, VariableSpec
from models.grid import BBox, Grid
from services.grid_ops import crop_bbox, regrid_nearest
from services.kwargs import ContextRef, GridRef, parse_kwargs_string, resolve_args
from services.transforms import TransformRegistry

logger = logging.getLogger(__name__)


class PipelineEnv:
    """What a transform may read: consumed grids, datastore context, pilot locals.

    Transforms see read-only views; only the engine adds consumed grids.
    """

    def __init__(
        self,
        context: Optional[Mapping[str, Any]] = None,
        pilot_locals: Optional[Mapping[str, Any]] = None,
        consumed: Optional[Mapping[str, Grid]] = None,
    ):
        self._consumed: Dict[str, Grid] = dict(consumed or {})
        self.context = MappingProxyType(dict(context or {}))
        self.pilot_locals = MappingProxyType(dict(pilot_locals or {}))

    @property
    def consumed(self) -> Mapping[str, Grid]:
        return MappingProxyType(self._consumed)

    def consume(self, name: str, grid: Grid) -> None:
        self._consumed[name] = grid

    def materialize(self, resolved: Mapping[str, Any]) -> Dict[str, Any]:
        """Turn GridRef/ContextRef placeholders into the values they name."""

        def value(v: Any) -> Any:
            if isinstance(v, GridRef):
                return self._consumed[v.name]
            if isinstance(v, ContextRef):
                return self.context[v.name]
            if isinstance(v, list):
                return [value(x) for x in v]
            return v

        return {k: value(v) for k, v in resolved.items()}


def apply_cascade(
    spec: TransformSpec,
    input: Grid,
    env: PipelineEnv,
    registry: TransformRegistry,
    variable: str = "",
) -> Grid:
    """Apply spec.functions first to last; arguments resolve right before each call."""
    # every name is checked before anything runs
    steps = [(registry.get(name, position=k), name, expr) for k, (name, expr) in enumerate(zip(spec.functions, spec.kwargs))]
    out = input
    for fn, name, expr in steps:
        args = resolve_args(parse_kwargs_string(expr), env.pilot_locals, env.context, env.consumed.keys())
        started = time.perf_counter()
        try:
            out = fn(out, env, **env.materialize(args))
        except OpcastError:
            raise
        except Exception as e:
            raise TransformFailed(name, e) from e
        logger.debug(
            "transform applied",
            extra={"fields": {
                "stage": "transform",
                "variable": variable,
                "transform": name,
                "elapsed_ms": round((time.perf_counter() - started) * 1000, 3),
            }},
        )
    return out


def transform_variable(
    name: str,
    spec: VariableSpec,
    grid: Grid,
    env: PipelineEnv,
    registry: TransformRegistry,
    bbox: Optional[BBox] = None,
    target: Optional[Grid] = None,
) -> Grid:
    """Crop, regrid onto the target grid, run the cascade and consume the result under `name`."""
    started = time.perf_counter()
    if bbox is not None:
        grid = crop_bbox(grid, bbox)
    if target is not None and not grid.same_space(target):
        grid = regrid_nearest(grid, target.lat, target.lon)
    out = apply_cascade(spec.processing, grid, env, registry, variable=name)
    out = out.replace(name=name)
    env.consume(name, out)
    logger.info(
        "variable processed",
        extra={"fields": {
            "stage": "transform",
            "variable": name,
            "transforms": list(spec.processing.functions),
            "shape": list(out.shape),
            "elapsed_ms": round((time.perf_counter() - started) * 1000, 3),
        }},
    )
    return out
