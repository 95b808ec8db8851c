from __future__ import annotations

import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

import tomli_w
from pydantic import ValidationError

from framework.errors import (
    BadBBox,
    BadContingency,
    ConfigError,
    MissingGathering,
    MissingModelPath,
    TomlSyntax,
    UnknownVariable,
)
from models.config import (
    ContingencyPolicy,
    DataStoreConfig,
    GatheringSpec,
    ModelSection,
    PilotConfig,
    TransformSpec,
    VariableSpec,
)
from models.grid import BBox

_LINE = re.compile(r"line (\d+)")
_GATHERING_KEYS = {"source", "dataset", "path", "open_with"}
_VARIABLE_KEYS = {"gathering", "processing", "static", "contingency"}
_SOURCE_ALIASES = {"dds": "remote"}


def _load_toml(text: str) -> Dict[str, Any]:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = _LINE.search(str(e))
        raise TomlSyntax(int(m.group(1)) if m else None, str(e)) from e


def _contingency(value: Any) -> ContingencyPolicy:
    try:
        return ContingencyPolicy(value)
    except ValueError as e:
        raise BadContingency(value) from e


def _variable(name: str, section: Dict[str, Any]) -> VariableSpec:
    if not isinstance(section, dict):
        raise ConfigError(f"[variables.{name}] must be a table")
    gathering = section.get("gathering")
    if not isinstance(gathering, dict) or not gathering:
        raise MissingGathering(name)
    gathering = dict(gathering)

    # contingency/static may sit in either table
    static = bool(gathering.pop("static", section.get("static", False)))
    contingency = _contingency(gathering.pop("contingency", section.get("contingency", "none")))

    request_params = {k: v for k, v in section.items() if k not in _VARIABLE_KEYS}
    request_params.update({k: v for k, v in gathering.items() if k not in _GATHERING_KEYS})
    source = str(gathering.get("source", "remote"))

    processing = section.get("processing") or {}
    try:
        return VariableSpec(
            gathering=GatheringSpec(
                source=_SOURCE_ALIASES.get(source, source),
                dataset=gathering.get("dataset", ""),
                request_params=request_params,
                path=gathering.get("path"),
                open_with=gathering.get("open_with"),
            ),
            processing=TransformSpec(
                functions=processing.get("functions", []),
                kwargs=processing.get("kwargs", []),
            ),
            static=static,
            contingency=contingency,
        )
    except ValidationError as e:
        raise ConfigError(f"[variables.{name}]: {e}") from e


def parse_datastore_config(toml_text: str) -> DataStoreConfig:
    """Parse the datastore library: one VariableSpec per [variables.<name>]."""
    raw = _load_toml(toml_text)
    sections = raw.get("variables", {})
    if not isinstance(sections, dict):
        raise ConfigError("'variables' must be a table")
    return DataStoreConfig(variables={name: _variable(name, s) for name, s in sections.items()})


def dump_datastore_config(cfg: DataStoreConfig) -> str:
    """Serialize back to TOML; parse_datastore_config(dump(cfg)) == cfg."""
    variables: Dict[str, Any] = {}
    for name, spec in cfg.variables.items():
        g = spec.gathering
        gathering: Dict[str, Any] = {"source": g.source}
        if g.dataset:
            gathering["dataset"] = g.dataset
        if g.path is not None:
            gathering["path"] = g.path
        if g.open_with is not None:
            gathering["open_with"] = g.open_with
        gathering.update(g.request_params)
        variables[name] = {
            "static": spec.static,
            "contingency": spec.contingency.value,
            "gathering": gathering,
            "processing": {
                "functions": list(spec.processing.functions),
                "kwargs": list(spec.processing.kwargs),
            },
        }
    return tomli_w.dumps({"variables": variables})


def load_datastore_config(path: Path) -> DataStoreConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read datastore config {path}: {e}") from e
    return parse_datastore_config(text)


def parse_pilot_config(
    toml_text: str,
    library: DataStoreConfig,
    base_dir: Optional[Path] = None,
) -> PilotConfig:
    """Parse a pilot setup; its variables must be a subset of the library."""
    raw = _load_toml(toml_text)
    site = raw.get("site", {})
    model = raw.get("model", {})
    if not model.get("weights"):
        raise MissingModelPath()

    b = site.get("bbox") or {}
    try:
        bbox = BBox(**b)
    except ValidationError as e:
        raise BadBBox(str(e)) from e

    variables = tuple(raw.get("variables", ()))
    for name in variables:
        if name not in library.variables:
            raise UnknownVariable(name)
    features = tuple(model.get("features", ()))
    for name in features:
        if name not in variables:
            raise UnknownVariable(name)

    try:
        return PilotConfig(
            name=site.get("name", ""),
            bbox=bbox,
            datastore_class=site.get("datastore_class", "remote"),
            processing_class=site.get("processing_class", "fdi"),
            datastore_config=site.get("datastore_config"),
            output_dir=site.get("output_dir", "output"),
            workers=site.get("workers", 1),
            model=ModelSection(**model),
            variables=variables,
            locals=dict(raw.get("locals", {})),
            base_dir=base_dir or Path("."),
        )
    except ValidationError as e:
        raise ConfigError(f"pilot config: {e}") from e


def load_pilot(conf: Path) -> tuple[PilotConfig, DataStoreConfig]:
    """Read a pilot TOML and the datastore library it points at."""
    conf = Path(conf)
    try:
        text = conf.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read pilot config {conf}: {e}") from e
    site = _load_toml(text).get("site", {})
    library_path = Path(site.get("datastore_config", "datastore.toml"))
    if not library_path.is_absolute():
        library_path = conf.parent / library_path
    library = load_datastore_config(library_path)
    return parse_pilot_config(text, library, base_dir=conf.parent), library
