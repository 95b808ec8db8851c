from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from framework.errors import ConfigError
from models.grid import BBox


class BaseConfig(BaseModel):
    """Base for configuration payloads: strict keys, immutable after parsing."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class ContingencyPolicy(str, Enum):
    NONE = "none"
    LATEST_DATE = "latest-date"
    PRECEDING_YEAR = "preceding-year"


class GatheringSpec(BaseConfig):
    source: Literal["remote", "file"] = Field(
        "remote",
        description="Where the variable comes from.",
        json_schema_extra={"example": "remote"},
    )
    dataset: str = Field(
        "",
        description="Dataset identifier at the datastore.",
        json_schema_extra={"example": "t2m"},
    )
    request_params: Dict[str, Any] = Field(
        default_factory=dict,
        description="Opaque request parameters passed through verbatim.",
        json_schema_extra={"example": {"product": "wrf2km", "resolution": "0.02"}},
    )
    path: Optional[str] = Field(None, description="File path when source = file.")
    open_with: Optional[str] = Field(None, description="Reader name when source = file.")

    @model_validator(mode="after")
    def _source_fields(self) -> GatheringSpec:
        if self.source == "remote" and not self.dataset:
            raise ConfigError("remote gathering requires a non-empty 'dataset'")
        if self.source == "file" and (not self.path or not self.open_with):
            raise ConfigError("file gathering requires 'path' and 'open_with'")
        return self


class TransformSpec(BaseConfig):
    functions: Tuple[str, ...] = Field(
        (),
        description="Transform names, applied first to last.",
        json_schema_extra={"example": ["daily_aggregate", "standardize"]},
    )
    kwargs: Tuple[str, ...] = Field(
        (),
        description="Argument expression per function (empty string allowed).",
        json_schema_extra={"example": ["{mode: 'max'}", "{feature: 't2m'}"]},
    )

    @model_validator(mode="after")
    def _paired(self) -> TransformSpec:
        if len(self.functions) != len(self.kwargs):
            raise ConfigError(
                f"processing lists {len(self.functions)} functions but {len(self.kwargs)} kwargs"
            )
        return self


class VariableSpec(BaseConfig):
    gathering: GatheringSpec
    processing: TransformSpec = Field(default_factory=TransformSpec)
    static: bool = Field(False, description="Time-invariant variable, cached by prepare_static.")
    contingency: ContingencyPolicy = Field(ContingencyPolicy.NONE, description="Fallback when data is missing.")


class DataStoreConfig(BaseConfig):
    variables: Dict[str, VariableSpec] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _names(self) -> DataStoreConfig:
        for name in self.variables:
            if not name:
                raise ConfigError("variable names must be non-empty")
        return self


class ModelSection(BaseConfig):
    weights: Path = Field(..., description="OPFW weight file.")
    stats: Optional[Path] = Field(None, description="Scaling statistics JSON.")
    features: Tuple[str, ...] = Field((), description="Model feature order; defaults to the pilot variables.")
    thresholds: Tuple[float, ...] = Field((0.2, 0.4, 0.6, 0.8), description="Danger category cut points.")
    mode: Literal["dense", "patch"] = Field("dense", description="Full-grid or per-pixel patch inference.")
    patch_size: int = Field(5, gt=0, description="Patch edge length in patch mode (odd).")


class PilotConfig(BaseConfig):
    name: str = Field(..., json_schema_extra={"example": "gargano_apulia_it"})
    bbox: BBox
    datastore_class: str = Field("remote", description="DataStore implementation for this pilot.")
    processing_class: str = Field("fdi", description="Transform registry for this pilot.")
    datastore_config: Optional[Path] = Field(None, description="Path of the datastore library TOML.")
    output_dir: Path = Field(Path("output"), description="Where forecast files are written.")
    workers: int = Field(1, gt=0, description="Concurrent fetches.")
    model: ModelSection
    variables: Tuple[str, ...] = Field(..., description="Ordered subset of the datastore library.")
    locals: Dict[str, Any] = Field(default_factory=dict, description="Site-level parameters for transforms.")
    base_dir: Path = Field(Path("."), description="Directory relative paths are resolved against.")

    @property
    def features(self) -> Tuple[str, ...]:
        return self.model.features or self.variables

    def resolve(self, path: Path) -> Path:
        return path if path.is_absolute() else self.base_dir / path
