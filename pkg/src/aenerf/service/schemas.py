"""Pydantic request/response models for the /api/v1 endpoints."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class EncodeRequest(BaseModel):
    image: str = Field(description="base64-encoded lossless raster image (PNG)")


class CameraParams(BaseModel):
    azimuth_deg: float = 0.0
    elevation_deg: float = Field(default=30.0, ge=0.0, le=90.0)
    radius: float = Field(default=3.0, gt=0.0, le=16.0)


class EncodeResponse(BaseModel):
    shape_code: list[float]
    appearance_code: list[float]
    rotation_6d: list[float]
    radius: float
    azimuth_deg: float
    elevation_deg: float
    session_token: str


class ManipulateRequest(BaseModel):
    operation: Literal["reconstruct", "swap", "interpolate", "orbit"]
    session_token_a: Optional[str] = None
    session_token_b: Optional[str] = None
    image_a: Optional[str] = None
    image_b: Optional[str] = None
    mask: Optional[Literal["shape", "appearance", "camera", "all"]] = None
    t: Optional[float] = None
    camera: Optional[CameraParams] = None
    resolution: Optional[int] = Field(default=None, ge=16, le=256)


class AttributesUsed(BaseModel):
    shape_code: list[float]
    appearance_code: list[float]
    rotation_6d: list[float]
    radius: float


class ManipulateResponse(BaseModel):
    image: str
    attributes_used: AttributesUsed
    operation: str


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool


class ModelInfoResponse(BaseModel):
    checkpoint_hash: str
    stage: int
    preset: str
    shape_dim: int
    appearance_dim: int
    resolution: int
    config_fingerprint: str


class ErrorBody(BaseModel):
    error: str
    detail: str = ""
