"""Request/response models for the edit service."""
from __future__ import annotations

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    video: str
    boxes: str
    out: str
    prompt: str = ""
    control_dir: str | None = None
    control_kind: str = "none"
    config: str | None = None
    mode: str | None = None
    postprocess: bool | None = None
    dump_frames: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)


class RunResponse(BaseModel):
    frames: int
    out: str
    dump_frames: str | None = None
    rois: list[list[int]]
    latent_sha256: list[str]
    stats: dict
    mode: str
    seed: int


class EvalRequest(BaseModel):
    original: str
    edited: str
    mask: str | None = None
    prompt: str | None = None
    config: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)


class EvalResponse(BaseModel):
    metrics: dict[str, float]
    text: str


class HealthResponse(BaseModel):
    status: str
    version: str
