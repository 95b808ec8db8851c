from __future__ import annotations

from datetime import date
from typing import Optional


class OpcastError(Exception):
    """Root of every error raised by the forecasting pipeline."""

    stage: str = "pipeline"


# -----------------------------------------------------------------------------
# Configuration
# -----------------------------------------------------------------------------
class ConfigError(OpcastError):
    stage = "config"


class TomlSyntax(ConfigError):
    def __init__(self, line: Optional[int], message: str = ""):
        self.line = line
        super().__init__(f"TOML syntax error at line {line}: {message}")


class MissingGathering(ConfigError):
    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"variable '{variable}' has no gathering section")


class BadContingency(ConfigError):
    def __init__(self, value: object):
        self.value = value
        super().__init__(f"unknown contingency policy {value!r}")


class UnknownVariable(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable '{name}' is not defined in the datastore library")


class BadBBox(ConfigError):
    def __init__(self, message: str = "lat_min < lat_max and lon_min < lon_max required"):
        super().__init__(f"invalid bounding box: {message}")


class MissingModelPath(ConfigError):
    def __init__(self):
        super().__init__("pilot [model] section must name a weights file")


class KwargsSyntax(ConfigError):
    def __init__(self, position: int, message: str = "unexpected input"):
        self.position = position
        super().__init__(f"kwargs syntax error at position {position}: {message}")


class DuplicateKey(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate kwargs key '{name}'")


class UnresolvedReference(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"'{name}' matches neither a pilot local nor a context variable")


class DanglingGridRef(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable '{name}' has not been consumed yet")


class UnknownComponent(ConfigError):
    def __init__(self, kind: str, name: str):
        self.kind = kind
        self.name = name
        super().__init__(f"unknown {kind} '{name}'")


# -----------------------------------------------------------------------------
# Datastore
# -----------------------------------------------------------------------------
class DataStoreError(OpcastError):
    stage = "fetch"


class FetchFailed(DataStoreError):
    def __init__(self, variable: str, requested: date, reason: str = ""):
        self.variable = variable
        self.requested = requested
        detail = f": {reason}" if reason else ""
        super().__init__(f"could not fetch '{variable}' for {requested.isoformat()}{detail}")


class NoFallbackDate(DataStoreError):
    def __init__(self, message: str):
        super().__init__(message)


class FileNotFound(DataStoreError, FileNotFoundError):
    def __init__(self, path: str):
        self.path = path
        DataStoreError.__init__(self, f"grid file not found: {path}")


class UnknownReader(DataStoreError):
    def __init__(self, reader: str):
        self.reader = reader
        super().__init__(f"no reader registered under open_with = '{reader}'")


class BadGridFile(DataStoreError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"unreadable grid file: {reason}")


class PortInUse(DataStoreError):
    def __init__(self, port: int):
        self.port = port
        super().__init__(f"port {port} is already in use")


class BadFixture(DataStoreError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"bad fixture: {reason}")


# -----------------------------------------------------------------------------
# Grids and codecs
# -----------------------------------------------------------------------------
class GridError(OpcastError):
    stage = "grid"


class GridInvariantError(GridError):
    pass


class EmptyCrop(GridError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"bounding box does not intersect grid '{name}'")


class MissingDate(GridError):
    def __init__(self, missing: date, name: str = ""):
        self.date = missing
        self.name = name
        super().__init__(f"grid '{name}' has no data for {missing.isoformat()}")


class GridMismatch(GridError):
    def __init__(self, name: str, message: str = "coordinates differ"):
        self.name = name
        super().__init__(f"grid '{name}': {message}")


class CodecError(OpcastError):
    stage = "codec"


class BadMagic(CodecError):
    def __init__(self, expected: bytes, found: bytes):
        self.expected = expected
        self.found = found
        super().__init__(f"bad magic: expected {expected!r}, found {found!r}")


class TruncatedPayload(CodecError):
    def __init__(self, message: str = "payload shorter than declared"):
        super().__init__(message)


class CorruptHeader(CodecError):
    def __init__(self, what: str, reason: str):
        self.what = what
        super().__init__(f"{what} header is corrupt: {reason}")


# -----------------------------------------------------------------------------
# Transforms
# -----------------------------------------------------------------------------
class TransformError(OpcastError):
    stage = "transform"


class UnknownTransform(TransformError):
    def __init__(self, name: str, position: Optional[int] = None):
        self.name = name
        self.position = position
        where = f" (cascade position {position})" if position is not None else ""
        super().__init__(f"unknown transform '{name}'{where}")


class DuplicateTransform(TransformError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"transform '{name}' is already registered")


class TransformFailed(TransformError):
    def __init__(self, name: str, cause: BaseException):
        self.name = name
        self.cause = cause
        super().__init__(f"transform '{name}' failed: {cause}")


class NotHourly(TransformError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"grid '{name}' does not carry an hourly time axis")


class NoPriorObservation(TransformError):
    def __init__(self, requested: date):
        self.date = requested
        super().__init__(f"no observation on or before {requested.isoformat()}")


class MissingDEM(TransformError):
    def __init__(self):
        super().__init__("compute_slope needs a DEM grid")


class UnknownFeature(TransformError):
    def __init__(self, feature: str):
        self.feature = feature
        super().__init__(f"no scaling statistics for feature '{feature}'")


class ZeroSigma(TransformError):
    def __init__(self, feature: str):
        self.feature = feature
        super().__init__(f"feature '{feature}' has a non-positive standard deviation")


# -----------------------------------------------------------------------------
# Inference
# -----------------------------------------------------------------------------
class InferenceError(OpcastError):
    stage = "inference"


class ShapeMismatch(InferenceError):
    def __init__(self, tensor: str, expected: tuple, found: tuple):
        self.tensor = tensor
        self.expected = expected
        self.found = found
        super().__init__(f"tensor '{tensor}': expected shape {expected}, found {found}")


class NonFiniteWeight(InferenceError):
    def __init__(self, tensor: str):
        self.tensor = tensor
        super().__init__(f"tensor '{tensor}' contains non-finite values")


class BadThresholds(InferenceError):
    def __init__(self, thresholds: object):
        self.thresholds = thresholds
        super().__init__(f"thresholds must be strictly ascending inside (0, 1): {thresholds}")


# -----------------------------------------------------------------------------
# Output
# -----------------------------------------------------------------------------
class OutputError(OpcastError):
    stage = "output"


class IoFailure(OutputError):
    def __init__(self, path: str, cause: BaseException):
        self.path = path
        self.cause = cause
        super().__init__(f"could not write {path}: {cause}")


class GridTooLarge(OutputError):
    pass


class WindowTooLarge(OutputError):
    def __init__(self, window: int, available: int):
        self.window = window
        self.available = available
        super().__init__(f"window {window} exceeds the {available} maps supplied")


class SnapshotError(OutputError):
    pass


# -----------------------------------------------------------------------------
# Run orchestration
# -----------------------------------------------------------------------------
class PipelineFailure(OpcastError):
    """A failure tagged with the run stage, the variable involved and the exit code."""

    def __init__(
        self,
        stage: str,
        error: BaseException,
        exit_code: int,
        variable: Optional[str] = None,
        position: Optional[int] = None,
    ):
        self.stage = stage
        self.error = error
        self.exit_code = exit_code
        self.variable = variable
        self.position = position
        super().__init__(str(error))

    def report(self) -> dict:
        out = {
            "stage": self.stage,
            "variable": self.variable,
            "error": type(self.error).__name__,
            "message": str(self.error),
        }
        if self.position is not None:
            out["position"] = self.position
        return out
