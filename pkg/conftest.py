import logging
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from utils.logs import HANDLER_NAME  # noqa: E402


@pytest.fixture(autouse=True)
def _detach_cli_log_handler():
    yield
    root = logging.getLogger()
    for h in list(root.handlers):
        if h.get_name() == HANDLER_NAME:
            root.removeHandler(h)
