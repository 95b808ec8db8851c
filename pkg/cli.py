"""Operator entry point: `python cli.py run --conf ... --date ... --geojson --netcdf`."""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import uvicorn

from framework.errors import ConfigError, DataStoreError, PipelineFailure, PortInUse
from models.run import RunOptions
from services.pipeline import EXIT_CONFIG, EXIT_DATA, run_pipeline, validate_config
from utils.logs import configure_logging


def _fail(failure: PipelineFailure) -> None:
    click.echo(json.dumps(failure.report()), err=True)
    sys.exit(failure.exit_code)


@click.group()
@click.option("--log-level", default=lambda: os.environ.get("OPCAST_LOG_LEVEL", "INFO"), show_default="INFO",
              help="Threshold of the JSON-lines log written to stderr.")
@click.pass_context
def cli(ctx: click.Context, log_level: str) -> None:
    """Operational fire danger forecasting."""
    # obj["http_client"]: optional httpx client carrying the datastore traffic
    ctx.ensure_object(dict)
    configure_logging(log_level)


@cli.command()
@click.option("--conf", required=True, type=click.Path(path_type=Path), help="Pilot setup TOML.")
@click.option("--date", "day", required=True, type=click.DateTime(formats=["%Y-%m-%d"]), help="Forecast date.")
@click.option("--collect_data", is_flag=True, help="Fetch and transform every pilot variable.")
@click.option("--prepare_static", is_flag=True, help="Fetch, transform and cache static variables.")
@click.option("--save_input", is_flag=True, help="Save the model input snapshot before inference.")
@click.option("--geojson", is_flag=True, help="Write fdi_<pilot>_<date>.geojson.")
@click.option("--netcdf", is_flag=True, help="Write fdi_<pilot>_<date>.nc.")
@click.pass_obj
def run(obj, conf, day, collect_data, prepare_static, save_input, geojson, netcdf) -> None:
    """Run one forecast."""
    try:
        opts = RunOptions(
            conf=conf,
            date=day.date(),
            collect_data=collect_data,
            prepare_static=prepare_static,
            save_input=save_input,
            geojson=geojson,
            netcdf=netcdf,
        )
    except ConfigError as e:
        _fail(PipelineFailure("options", e, EXIT_CONFIG))
    try:
        result = run_pipeline(opts, client=obj.get("http_client"))
    except PipelineFailure as e:
        _fail(e)
    for name in result.static_entries:
        click.echo(f"static: {name}")
    if result.snapshot is not None:
        click.echo(str(result.snapshot))
    for path in result.outputs:
        click.echo(str(path))


@cli.command()
@click.option("--conf", required=True, type=click.Path(path_type=Path), help="Pilot setup TOML.")
def validate(conf) -> None:
    """Parse the pilot and its datastore library and check every transform chain."""
    try:
        report = validate_config(conf)
    except PipelineFailure as e:
        _fail(e)
    click.echo(f"pilot {report.pilot}: datastore={report.datastore_class} processing={report.processing_class}")
    click.echo(f"features: {', '.join(report.features)}")
    click.echo(report.table())


@cli.command()
@click.option("--fixtures", type=click.Path(path_type=Path), default=None,
              help="Fixture tree (default: $OPCAST_FIXTURE_DIR or pilots/demo/fixtures).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=lambda: int(os.environ.get("FASTAPIPORT", 8000)), show_default="8000")
def serve(fixtures, host, port) -> None:
    """Serve a fixture tree as a mock datastore."""
    from main import create_app, fixture_dir, port_in_use

    try:
        app = create_app(fixtures or fixture_dir)
    except DataStoreError as e:
        _fail(PipelineFailure("serve", e, EXIT_DATA))
    if port_in_use(host, port):
        _fail(PipelineFailure("serve", PortInUse(port), EXIT_DATA))
    uvicorn.run(app, host=host, port=port, log_level="warning")


@cli.command("make-demo")
@click.option("--root", type=click.Path(path_type=Path), default=None, help="Target tree (default: this repository).")
@click.option("--seed", type=int, default=7, show_default=True)
def make_demo(root, seed) -> None:
    """Mint the demo fixture datastore, synthetic weights and scaling stats."""
    from services.demo import build_demo

    paths = build_demo(root, seed=seed)
    click.echo(f"pilot:    {paths.conf}")
    click.echo(f"fixtures: {paths.fixtures}")
    click.echo(f"weights:  {paths.weights}")
    click.echo(f"stats:    {paths.stats}")


if __name__ == "__main__":
    cli()
