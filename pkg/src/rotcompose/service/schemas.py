"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class SynthRequest(BaseModel):
    config: dict = Field(default_factory=dict)  # SynthConfig fields + holdout/name
    output_dir: str


class SynthResponse(BaseModel):
    files: list[str]
    resolved_config: dict


class TrainRequest(BaseModel):
    config: dict  # TrainConfig fields at top level plus a "data" section
    output_dir: str


class TrainResponse(BaseModel):
    checkpoints: list[str]
    metrics_files: list[str]
    summary: dict
    resolved_config: dict


class EvalRequest(BaseModel):
    config: dict  # {checkpoint, dataset, ks, normalize}
    output_dir: str


class EvalResponse(BaseModel):
    report: dict
    report_file: str
    resolved_config: dict


class GradCheckRequest(BaseModel):
    config: dict = Field(default_factory=dict)  # {seed, batch, eps}
    output_dir: Optional[str] = None


class GradCheckResponse(BaseModel):
    max_rel_error: float
    threshold: float
    passed: bool
    resolved_config: dict


class SelfTestRequest(BaseModel):
    output_dir: Optional[str] = None


class SelfTestResponse(BaseModel):
    checks: list[dict]
    passed: bool


class ErrorBody(BaseModel):
    error: str
    message: str
