from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from framework.errors import ConfigError


class RunOptions(BaseModel):
    """One invocation of `run`, flag for flag."""

    conf: Path = Field(..., description="Pilot setup TOML.", json_schema_extra={"example": "pilots/demo/setup.toml"})
    date: dt.date = Field(..., description="Forecast date.", json_schema_extra={"example": "2024-07-09"})
    collect_data: bool = Field(False, description="Fetch and transform every pilot variable.")
    prepare_static: bool = Field(False, description="Populate the static cache.")
    save_input: bool = Field(False, description="Write the input snapshot before inference.")
    geojson: bool = Field(False, description="Write the GeoJSON product.")
    netcdf: bool = Field(False, description="Write the NetCDF-3 product.")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _something_to_do(self) -> RunOptions:
        if self.save_input and not self.collect_data:
            raise ConfigError("--save_input requires --collect_data")
        if not (self.runs_inference or self.prepare_static or self.save_input):
            raise ConfigError("nothing to do: pass --geojson and/or --netcdf")
        return self

    @property
    def runs_inference(self) -> bool:
        return self.geojson or self.netcdf


class RunResult(BaseModel):
    outputs: List[Path] = Field(default_factory=list, description="Forecast files published by the run.")
    snapshot: Optional[Path] = Field(None, description="Input snapshot written by --save_input.")
    static_entries: List[str] = Field(default_factory=list, description="Variables present in the static cache.")
    provenance: Dict[str, Dict[str, str]] = Field(default_factory=dict, description="Contingency fallbacks used.")


class VariableRow(BaseModel):
    name: str
    source: str = Field(..., description="remote or file.")
    dataset: str = Field("", description="Dataset identifier or file path.")
    static: bool = False
    contingency: str = "none"
    transforms: List[str] = Field(default_factory=list)


class ValidationReport(BaseModel):
    pilot: str
    datastore_class: str
    processing_class: str
    features: List[str] = Field(default_factory=list)
    variables: List[VariableRow] = Field(default_factory=list)

    def table(self) -> str:
        header = ("variable", "source", "dataset", "static", "contingency", "transforms")
        rows = [header] + [
            (
                r.name,
                r.source,
                r.dataset,
                "yes" if r.static else "no",
                r.contingency,
                " > ".join(r.transforms) or "-",
            )
            for r in self.variables
        ]
        widths = [max(len(row[k]) for row in rows) for k in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)
