from __future__ import annotations

from datetime import date
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from framework.errors import BadThresholds, InferenceError
from models.grid import Grid

GATES = ("i", "f", "o", "g")
TENSOR_NAMES = tuple(
    [f"W_x{g}" for g in GATES] + [f"W_h{g}" for g in GATES] + [f"b_{g}" for g in GATES] + ["head_W", "head_b"]
)


def check_thresholds(thresholds) -> Tuple[float, ...]:
    t = tuple(float(x) for x in thresholds)
    if any(not (0.0 < x < 1.0) for x in t) or any(b <= a for a, b in zip(t, t[1:])):
        raise BadThresholds(list(t))
    return t


class ModelConfig(BaseModel):
    """Hyperparameters of the single-layer ConvLSTM classifier."""

    nf: int = Field(..., gt=0, description="Number of fire predictors.", json_schema_extra={"example": 5})
    days: int = Field(..., gt=0, description="Timesteps per sample.", json_schema_extra={"example": 3})
    hidden: int = Field(16, gt=0, description="Hidden channels.")
    kernel: int = Field(3, gt=0, description="Odd convolution kernel size.")
    classes: int = Field(2, description="Fire / no-fire.")
    thresholds: Tuple[float, ...] = Field((0.2, 0.4, 0.6, 0.8), description="Danger category cut points.")

    model_config = ConfigDict(frozen=True)

    @field_validator("thresholds", mode="before")
    @classmethod
    def _thresholds(cls, v):
        return check_thresholds(v)

    @model_validator(mode="after")
    def _arch(self) -> ModelConfig:
        if self.kernel % 2 == 0:
            raise InferenceError(f"kernel size must be odd, got {self.kernel}")
        if self.classes != 2:
            raise InferenceError(f"exactly 2 classes are supported, got {self.classes}")
        return self

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        k, hid = self.kernel, self.hidden
        shapes: Dict[str, Tuple[int, ...]] = {}
        for g in GATES:
            shapes[f"W_x{g}"] = (hid, self.nf, k, k)
            shapes[f"W_h{g}"] = (hid, hid, k, k)
            shapes[f"b_{g}"] = (hid,)
        shapes["head_W"] = (self.classes, hid)
        shapes["head_b"] = (self.classes,)
        return shapes


class ConvLstmWeights(BaseModel):
    """Named float32 tensors; see TENSOR_NAMES."""

    tensors: Dict[str, np.ndarray]

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    __hash__ = None  # type: ignore[assignment]


class DangerMap(BaseModel):
    """Per-pixel fire probability and danger category for one forecast date."""

    pilot: str = ""
    p_fire: Grid
    p_nofire: Grid
    category: Grid
    forecast_date: date
    provenance: Dict[str, Dict[str, str]] = Field(
        default_factory=dict,
        description="Variables served through a contingency fallback.",
        json_schema_extra={"example": {"lst_day": {"fallback": "latest-date", "requested": "2024-07-09", "served": "2024-07-08"}}},
    )

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def categories(self) -> np.ndarray:
        return self.category.values.astype(np.int32)

    __hash__ = None  # type: ignore[assignment]
