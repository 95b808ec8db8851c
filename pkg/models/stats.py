from __future__ import annotations

import json
from pathlib import Path
from typing import Dict

from pydantic import BaseModel, ConfigDict, Field, model_validator

from framework.errors import ConfigError, UnknownFeature, ZeroSigma


class FeatureStats(BaseModel):
    mean: float = Field(..., description="Training-set mean of the feature.", json_schema_extra={"example": 301.2})
    std: float = Field(..., description="Training-set standard deviation.", json_schema_extra={"example": 4.7})
    fill: float = Field(0.0, description="Value used for missing cells after scaling.")

    model_config = ConfigDict(frozen=True)


class ScalingStats(BaseModel):
    """Per-feature training moments shipped next to the weights."""

    features: Dict[str, FeatureStats] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _positive_sigma(self) -> ScalingStats:
        for name, s in self.features.items():
            if not s.std > 0:
                raise ZeroSigma(name)
        return self

    def __getitem__(self, feature: str) -> FeatureStats:
        try:
            return self.features[feature]
        except KeyError as e:
            raise UnknownFeature(feature) from e

    @property
    def fill(self) -> Dict[str, float]:
        return {name: s.fill for name, s in self.features.items()}

    def to_json(self) -> str:
        return json.dumps({k: v.model_dump() for k, v in self.features.items()}, indent=2, sort_keys=True)


def load_stats(path: Path) -> ScalingStats:
    """Read the `{feature: {mean, std, fill}}` stats file."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read scaling stats {path}: {e}") from e
    return ScalingStats(features=raw)
