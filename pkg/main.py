"""Mock datastore: serves fixture grids over the datastore HTTP API."""
from __future__ import annotations

import logging
import os
import socket
import threading
import time
from datetime import date, datetime, timezone
from pathlib import Path
from typing import List, Optional, Union

import uvicorn
from fastapi import FastAPI, Path as PathParam, Query, Request

from framework.errors import PortInUse
from middleware.failure_injection import FailureInjectionMiddleware, LoggedRequest
from models.health import Health
from resources.datasets import load_fixture, router as datasets_router

logger = logging.getLogger(__name__)

port = int(os.environ.get("FASTAPIPORT", 8000))
fixture_dir = os.environ.get("OPCAST_FIXTURE_DIR", "pilots/demo/fixtures")


def create_app(fixtures: Union[str, Path]) -> FastAPI:
    """Build the mock datastore for a fixture directory (raises BadFixture)."""
    datasets = load_fixture(Path(fixtures))
    app = FastAPI(
        title="OpCast mock datastore",
        description="Serves availability and OPGRID payloads from a fixture tree, with failure injection",
        version="0.1.0",
    )
    app.state.datasets = datasets
    app.state.request_log = []
    app.state.failures = {(ds.name, d) for ds in datasets.values() for d in ds.fail}
    app.add_middleware(FailureInjectionMiddleware)
    app.include_router(datasets_router)

    def make_health(request: Request, echo: Optional[str], path_echo: Optional[str] = None) -> Health:
        return Health(
            status=200,
            status_message="OK",
            timestamp=datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            ip_address=socket.gethostbyname(socket.gethostname()),
            datasets=len(request.app.state.datasets),
            injected_failures=len(request.app.state.failures),
            echo=echo,
            path_echo=path_echo,
        )

    @app.get("/health", response_model=Health)
    def get_health_no_path(request: Request, echo: str | None = Query(None, description="Optional echo string")):
        return make_health(request, echo=echo, path_echo=None)

    @app.get("/health/{path_echo}", response_model=Health)
    def get_health_with_path(
        request: Request,
        path_echo: str = PathParam(..., description="Required echo in the URL path"),
        echo: str | None = Query(None, description="Optional echo string"),
    ):
        return make_health(request, echo=echo, path_echo=path_echo)

    @app.get("/")
    def root():
        return {"message": "OpCast mock datastore. See /docs for OpenAPI UI."}

    return app


def inject_failure(app: FastAPI, dataset: str, day: date) -> None:
    app.state.failures.add((dataset, day))


def port_in_use(host: str, port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        try:
            sock.bind((host, port))
        except OSError:
            return True
    return False


class MockDatastore:
    """A mock datastore running under uvicorn in a background thread."""

    def __init__(self, app: FastAPI, host: str, port: int):
        self.app = app
        self.host = host
        self.port = port
        self.server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning"))
        self._thread = threading.Thread(target=self.server.run, name=f"mock-datastore-{port}", daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def request_log(self) -> List[LoggedRequest]:
        return self.app.state.request_log

    def inject_failure(self, dataset: str, day: date) -> None:
        inject_failure(self.app, dataset, day)

    def start(self, timeout: float = 10.0) -> MockDatastore:
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if not self._thread.is_alive() or time.monotonic() > deadline:
                raise PortInUse(self.port)
            time.sleep(0.05)
        logger.info("mock datastore started", extra={"fields": {"url": self.url}})
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        self._thread.join(timeout=10.0)

    def __enter__(self) -> MockDatastore:
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_mock_datastore(fixtures: Union[str, Path], port: int, host: str = "127.0.0.1") -> MockDatastore:
    """Start serving `fixtures` on host:port; raises BadFixture or PortInUse."""
    app = create_app(fixtures)
    if port_in_use(host, port):
        raise PortInUse(port)
    return MockDatastore(app, host, port).start()


if __name__ == "__main__":
    uvicorn.run(create_app(fixture_dir), host="0.0.0.0", port=port)
