import pytest
from fastapi.testclient import TestClient

from main import create_app
from services.demo import build_demo


@pytest.fixture
def demo(tmp_path, monkeypatch):
    monkeypatch.delenv("OPCAST_CACHE_DIR", raising=False)
    return build_demo(tmp_path)


@pytest.fixture
def mock_app(demo):
    return create_app(demo.fixtures)


@pytest.fixture
def client(mock_app):
    with TestClient(mock_app) as c:
        yield c


@pytest.fixture
def wired(client):
    """CLI context object routing datastore traffic to the in-process mock."""
    return {"http_client": client}
