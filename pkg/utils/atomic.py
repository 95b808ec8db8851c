from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Dict, List, Union

from framework.errors import IoFailure

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write via a temp file in the same directory, then rename over `path`."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailure(str(path), e) from e
    return path


class OutputBatch:
    """Stage several files and publish them together.

    Nothing is visible at the target paths until commit(); if any rename
    fails, files already published by this batch are removed again.
    """

    def __init__(self):
        self._staged: Dict[Path, bytes] = {}

    def add(self, path: PathLike, data: bytes) -> None:
        self._staged[Path(path)] = data

    def commit(self) -> List[Path]:
        temps: Dict[Path, str] = {}
        published: List[Path] = []
        try:
            for path, data in self._staged.items():
                path.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
                temps[path] = tmp
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
            for path, tmp in temps.items():
                os.replace(tmp, path)
                published.append(path)
        except OSError as e:
            for p in published:
                p.unlink(missing_ok=True)
            for tmp in temps.values():
                if os.path.exists(tmp):
                    os.unlink(tmp)
            failed = next((p for p in self._staged if p not in published), None)
            raise IoFailure(str(failed), e) from e
        return published
