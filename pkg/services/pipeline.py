"""End-to-end forecast run: statics, collection, stacking, inference, products."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import httpx

from framework.errors import (
    ConfigError,
    GridMismatch,
    OpcastError,
    PipelineFailure,
    ShapeMismatch,
    UnknownComponent,
    UnknownTransform,
)
from models.config import ContingencyPolicy, DataStoreConfig, PilotConfig
from models.danger import check_thresholds
from models.fetch import FetchResult
from models.grid import Grid, SampleTensor
from models.run import RunOptions, RunResult, ValidationReport, VariableRow
from models.stats import ScalingStats, load_stats
from services.cascade import PipelineEnv, transform_variable
from services.config_loader import load_pilot
from services.datastore import DATASTORE_CLASSES, DataStore, datastore_for, fetch_variable
from services.grid_ops import stack_sample
from services.inference import infer_region
from services.kwargs import parse_kwargs_string, resolve_args
from services.output import (
    forecast_name,
    geojson_bytes,
    netcdf_bytes,
    read_input_snapshot,
    snapshot_name,
    write_input_snapshot,
)
from services.static_cache import cache_root, cached_grid, load_static_cache, prepare_static
from services.transforms import TransformRegistry, registry_for
from services.weights import load_weights
from utils.atomic import OutputBatch

logger = logging.getLogger(__name__)

EXIT_CONFIG, EXIT_DATA, EXIT_INFERENCE, EXIT_OUTPUT = 2, 3, 4, 5

Provenance = Dict[str, Dict[str, str]]


@contextmanager
def stage(name: str, exit_code: int, variable: Optional[str] = None) -> Iterator[None]:
    """Tag failures inside the block with the stage, the variable and the exit code."""
    started = time.perf_counter()
    try:
        yield
    except PipelineFailure:
        raise
    except ConfigError as e:
        raise PipelineFailure(name, e, EXIT_CONFIG, variable) from e
    except OpcastError as e:
        raise PipelineFailure(name, e, exit_code, variable) from e
    if variable is None:
        logger.info(
            "stage done",
            extra={"fields": {"stage": name, "elapsed_ms": round((time.perf_counter() - started) * 1000, 3)}},
        )


def window_dates(day: date, days: int) -> List[date]:
    """The `days` consecutive dates ending at `day`."""
    return [day - timedelta(days=k) for k in range(days - 1, -1, -1)]


def open_datastore(pilot: PilotConfig, client: Optional[httpx.Client] = None) -> DataStore:
    """The pilot's datastore class, over `client` when one is given."""
    kwargs: Dict[str, Any] = {} if client is None else {"client": client}
    return datastore_for(pilot.datastore_class, **kwargs)


def collect_sample(
    pilot: PilotConfig,
    library: DataStoreConfig,
    store: DataStore,
    registry: TransformRegistry,
    day: date,
    dates: List[date],
    context: Mapping[str, Any],
    stats: Optional[ScalingStats],
    root: Path,
) -> Tuple[SampleTensor, Provenance]:
    """Fetch (concurrently) and transform (in pilot order) every variable, then stack the features."""
    cache = load_static_cache(root, pilot.name)
    cached: Dict[str, Grid] = {}
    for v in pilot.variables:
        if library.variables[v].static:
            hit = cached_grid(cache, v, pilot.bbox)
            if hit is not None:
                cached[v] = hit

    to_fetch = [v for v in pilot.variables if v not in cached]
    results: Dict[str, FetchResult] = {}
    with ThreadPoolExecutor(max_workers=pilot.workers, thread_name_prefix="fetch") as pool:
        futures = {
            v: pool.submit(fetch_variable, library.variables[v], day, pilot.bbox, store, v, pilot.base_dir)
            for v in to_fetch
        }
        for v in to_fetch:
            with stage("fetch", EXIT_DATA, v):
                results[v] = futures[v].result()

    first = pilot.variables[0]
    target = cached[first] if first in cached else results[first].grid
    env = PipelineEnv(context, pilot.locals)
    for v in pilot.variables:
        if v in cached:
            env.consume(v, cached[v])
            continue
        with stage("transform", EXIT_DATA, v):
            transform_variable(v, library.variables[v], results[v].grid, env, registry, pilot.bbox, target)

    provenance = {
        v: r.provenance() for v, r in results.items() if r.fallback is not ContingencyPolicy.NONE
    }
    with stage("stack", EXIT_DATA):
        grids = [env.consumed[f] for f in pilot.features]
        sample = stack_sample(grids, dates, fill=stats.fill if stats is not None else None)
    return sample, provenance


def run_pipeline(
    opts: RunOptions,
    store: Optional[DataStore] = None,
    client: Optional[httpx.Client] = None,
) -> RunResult:
    """Execute one forecast run; failures surface as PipelineFailure.

    Forecast products are published together after inference succeeds, so a
    failed run leaves no forecast file behind.
    """
    with stage("config", EXIT_CONFIG):
        pilot, library = load_pilot(opts.conf)
        registry = registry_for(pilot.processing_class)
        stats = load_stats(pilot.resolve(pilot.model.stats)) if pilot.model.stats else None

    cfg = weights = None
    if opts.collect_data or opts.runs_inference:
        with stage("weights", EXIT_INFERENCE):
            cfg, weights = load_weights(pilot.resolve(pilot.model.weights))
            if cfg.nf != len(pilot.features):
                raise ShapeMismatch("sample", (cfg.nf,), (len(pilot.features),))

    day = opts.date
    dates = window_dates(day, cfg.days if cfg is not None else 1)
    context = {"dates": dates, "date": day, "bbox": pilot.bbox, "stats": stats}
    root = cache_root(pilot)
    output_dir = pilot.resolve(pilot.output_dir)
    result = RunResult()

    owned = store is None
    if owned and (opts.prepare_static or opts.collect_data):
        with stage("config", EXIT_CONFIG):
            store = open_datastore(pilot, client)
    try:
        if opts.prepare_static:
            with stage("static", EXIT_DATA):
                cache = prepare_static(pilot, library, store, registry, day, context, root)
            result.static_entries = sorted(cache.entries)

        sample: Optional[SampleTensor] = None
        provenance: Provenance = {}
        if opts.collect_data:
            sample, provenance = collect_sample(pilot, library, store, registry, day, dates, context, stats, root)
            if opts.save_input:
                with stage("snapshot", EXIT_OUTPUT):
                    result.snapshot = write_input_snapshot(
                        sample, output_dir / snapshot_name(pilot.name, day), pilot.name, provenance,
                    )
        elif opts.runs_inference:
            with stage("snapshot", EXIT_DATA):
                sample, provenance = read_input_snapshot(output_dir / snapshot_name(pilot.name, day))
                if sample.features != pilot.features or sample.dates != tuple(dates):
                    raise GridMismatch("<snapshot>", "snapshot does not match the pilot features or forecast window")
        result.provenance = provenance

        if opts.runs_inference:
            with stage("inference", EXIT_INFERENCE):
                cfg = cfg.model_copy(update={"thresholds": check_thresholds(pilot.model.thresholds)})
                dmap = infer_region(
                    sample, cfg, weights,
                    mode=pilot.model.mode, patch_size=pilot.model.patch_size,
                    pilot=pilot.name, provenance=provenance,
                )
            with stage("output", EXIT_OUTPUT):
                batch = OutputBatch()
                if opts.geojson:
                    batch.add(output_dir / forecast_name(pilot.name, day, "geojson"), geojson_bytes(dmap))
                if opts.netcdf:
                    batch.add(output_dir / forecast_name(pilot.name, day, "nc"), netcdf_bytes(dmap))
                result.outputs = batch.commit()
            logger.info(
                "forecast written",
                extra={"fields": {
                    "stage": "output",
                    "pilot": pilot.name,
                    "date": day.isoformat(),
                    "files": [str(p) for p in result.outputs],
                    "fallbacks": sorted(provenance),
                }},
            )
    finally:
        if owned and store is not None:
            store.close()
    return result


CONTEXT_NAMES = ("dates", "date", "bbox", "stats")


def validate_config(conf: Path) -> ValidationReport:
    """Dry run: parse both TOML files and check every component and cascade reference."""
    with stage("validate", EXIT_CONFIG):
        pilot, library = load_pilot(conf)
        registry = registry_for(pilot.processing_class)
        if pilot.datastore_class not in DATASTORE_CLASSES:
            raise UnknownComponent("datastore class", pilot.datastore_class)

    context = {name: None for name in CONTEXT_NAMES}
    consumed: List[str] = []
    rows: List[VariableRow] = []
    for v in pilot.variables:
        spec = library.variables[v]
        for k, (fn, expr) in enumerate(zip(spec.processing.functions, spec.processing.kwargs)):
            try:
                registry.get(fn, position=k)
                resolve_args(parse_kwargs_string(expr), pilot.locals, context, consumed)
            except (ConfigError, UnknownTransform) as e:
                raise PipelineFailure("validate", e, EXIT_CONFIG, v, k) from e
        consumed.append(v)
        g = spec.gathering
        rows.append(VariableRow(
            name=v,
            source=g.source,
            dataset=g.dataset if g.source == "remote" else f"{g.path} ({g.open_with})",
            static=spec.static,
            contingency=spec.contingency.value,
            transforms=list(spec.processing.functions),
        ))
    return ValidationReport(
        pilot=pilot.name,
        datastore_class=pilot.datastore_class,
        processing_class=pilot.processing_class,
        features=list(pilot.features),
        variables=rows,
    )
