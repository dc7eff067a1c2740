"""Request/response models for the HTTP service."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import ExperimentConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HealthResponse(StrictModel):
    status: str
    version: str


class RunRequest(StrictModel):
    config: ExperimentConfig


class RunResponse(StrictModel):
    report: dict
    timing: dict


class OneRequest(StrictModel):
    config: ExperimentConfig


class OneResponse(StrictModel):
    report: dict


class VerifyBoundsRequest(StrictModel):
    trials: int = Field(ge=1)
    seed: int = 0


class VerifyBoundsResponse(StrictModel):
    report: dict


class StressRequest(StrictModel):
    tasks: int = Field(ge=1)
    config: Optional[ExperimentConfig] = None


class StressResponse(StrictModel):
    report: dict
