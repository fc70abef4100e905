"""FastAPI application wrapping an inference model snapshot.

The loaded model is immutable; the only mutable state is the bounded
session cache. Every endpoint is idempotent for identical payloads and
model checkpoint: session tokens are content hashes and rendering is
deterministic.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import io
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from ..encoder import EncodedAttributes
from ..eval import interpolate_codes
from ..field import LatentCodes
from ..geometry import matrix_to_rot6d, pose_angles
from ..inference import InferenceModel
from ..persistence import config_fingerprint
from ..training import swap_codes
from .schemas import (
    AttributesUsed,
    EncodeRequest,
    EncodeResponse,
    HealthResponse,
    ManipulateRequest,
    ManipulateResponse,
    ModelInfoResponse,
)
from .sessions import SessionCache

MAX_IMAGE_BYTES = 4 * 1024 * 1024
MAX_INPUT_SIDE = 512


class ApiError(Exception):
    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.status = status
        self.code = code
        self.detail = detail


def _decode_image(payload: str) -> torch.Tensor:
    try:
        raw = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ApiError(400, "bad_image", f"invalid base64: {exc}") from exc
    if len(raw) > MAX_IMAGE_BYTES:
        raise ApiError(413, "image_too_large", f"payload exceeds {MAX_IMAGE_BYTES} bytes")
    try:
        with Image.open(io.BytesIO(raw)) as img:
            img = img.convert("RGB")
    except Exception as exc:
        raise ApiError(400, "bad_image", f"undecodable raster: {exc}") from exc
    if max(img.size) > MAX_INPUT_SIDE:
        raise ApiError(413, "image_too_large", f"input side exceeds {MAX_INPUT_SIDE}")
    array = np.asarray(img).astype(np.float32) / 255.0
    return torch.from_numpy(array)


def _encode_png(image: torch.Tensor) -> str:
    array = (image.clamp(0, 1) * 255.0).round().to(torch.uint8).numpy()
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _attributes_used(attrs: EncodedAttributes) -> AttributesUsed:
    return AttributesUsed(
        shape_code=[float(x) for x in attrs.codes.shape],
        appearance_code=[float(x) for x in attrs.codes.appearance],
        rotation_6d=[float(x) for x in matrix_to_rot6d(attrs.pose.rotation)],
        radius=attrs.pose.radius,
    )


def create_app(model: InferenceModel | None = None, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="aenerf inference service", version="1.0")
    app.state.model = model
    app.state.sessions = SessionCache[EncodedAttributes]()

    @app.exception_handler(ApiError)
    async def _api_error(_, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.code, "detail": exc.detail})

    def current_model() -> InferenceModel:
        if app.state.model is None:
            raise ApiError(409, "no_model", "no checkpoint loaded")
        return app.state.model

    def resolve_session(token: str | None, image_b64: str | None, side: str) -> EncodedAttributes:
        model = current_model()
        if token:
            attrs = app.state.sessions.get(token)
            if attrs is None:
                raise ApiError(404, "dead_session", f"unknown or expired session token for {side}")
            return attrs
        if image_b64:
            attrs = model.encode(_decode_image(image_b64))
            app.state.sessions.put(_token_for(image_b64, model), attrs)
            return attrs
        raise ApiError(400, "bad_request", f"missing session token or image for slot {side}")

    def _token_for(image_b64: str, model: InferenceModel) -> str:
        digest = hashlib.sha256()
        digest.update(image_b64.encode("ascii"))
        digest.update(model.checkpoint_hash.encode("ascii"))
        return digest.hexdigest()[:32]

    @app.get("/api/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", model_loaded=app.state.model is not None)

    @app.get("/api/v1/model", response_model=ModelInfoResponse)
    def model_info() -> ModelInfoResponse:
        model = current_model()
        return ModelInfoResponse(
            checkpoint_hash=model.checkpoint_hash,
            stage=model.stage,
            preset=model.config.preset,
            shape_dim=model.config.model.shape_dim,
            appearance_dim=model.config.model.appearance_dim,
            resolution=model.config.data.resolution,
            config_fingerprint=config_fingerprint(model.config),
        )

    @app.post("/api/v1/encode", response_model=EncodeResponse)
    def encode(req: EncodeRequest) -> EncodeResponse:
        model = current_model()
        image = _decode_image(req.image)
        attrs = model.encode(image)
        token = _token_for(req.image, model)
        app.state.sessions.put(token, attrs)
        azimuth, elevation = pose_angles(attrs.pose)
        return EncodeResponse(
            shape_code=[float(x) for x in attrs.codes.shape],
            appearance_code=[float(x) for x in attrs.codes.appearance],
            rotation_6d=[float(x) for x in matrix_to_rot6d(attrs.pose.rotation)],
            radius=attrs.pose.radius,
            azimuth_deg=azimuth,
            elevation_deg=elevation,
            session_token=token,
        )

    @app.post("/api/v1/manipulate", response_model=ManipulateResponse)
    def manipulate(req: ManipulateRequest) -> ManipulateResponse:
        model = current_model()
        attrs_a = resolve_session(req.session_token_a, req.image_a, "a")
        if req.operation == "reconstruct":
            attrs = attrs_a
        elif req.operation == "swap":
            if req.mask not in ("shape", "appearance", "camera"):
                raise ApiError(400, "bad_request", "swap needs mask shape|appearance|camera")
            attrs_b = resolve_session(req.session_token_b, req.image_b, "b")
            if req.mask == "camera":
                attrs = EncodedAttributes(codes=attrs_a.codes, pose=attrs_b.pose)
            else:
                attrs = swap_codes(attrs_a, attrs_b, req.mask)
        elif req.operation == "interpolate":
            if req.mask is None:
                raise ApiError(400, "bad_request", "interpolate needs a mask")
            if req.t is None or not -4.0 <= req.t <= 4.0:
                raise ApiError(400, "bad_request", "interpolate needs t in [-4, 4]")
            attrs_b = resolve_session(req.session_token_b, req.image_b, "b")
            attrs = interpolate_codes(attrs_a, attrs_b, req.t, req.mask)
        elif req.operation == "orbit":
            if req.camera is None:
                raise ApiError(400, "bad_request", "orbit needs camera parameters")
            pose = model.orbit_pose(
                req.camera.azimuth_deg, req.camera.elevation_deg, req.camera.radius
            )
            attrs = EncodedAttributes(codes=attrs_a.codes, pose=pose)
        else:  # pragma: no cover - pydantic rejects other literals
            raise ApiError(400, "bad_request", f"unknown operation {req.operation}")
        rendered = model.render(attrs, req.resolution)
        return ManipulateResponse(
            image=_encode_png(rendered),
            attributes_used=_attributes_used(attrs),
            operation=req.operation,
        )

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def load_and_serve(checkpoint: str, host: str, port: int, static_dir: str | None = None) -> None:
    """Blocking entry point used by the CLI serve subcommand."""
    import uvicorn

    from ..persistence import load_inference_model

    model = load_inference_model(checkpoint)
    uvicorn.run(create_app(model, static_dir=static_dir), host=host, port=port, log_level="info")
