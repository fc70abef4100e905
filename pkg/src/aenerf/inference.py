"""Inference-time model wrapper shared by the CLI, service and eval suite.

Bundles the trained encoder and decoder behind the manipulation
operations (reconstruct, swap, interpolate, orbit) with deterministic
rendering. The wrapper is an immutable snapshot: requests may run against
it concurrently and a reload simply swaps the snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .config import RunConfig
from .encoder import Encoder, EncodedAttributes, encode as encode_image, encode_patch as encode_patch_codes
from .field import LatentCodes, RadianceField
from .geometry import CameraPose, pose_from_angles
from .renderer import RenderConfig, render_image


@dataclass(frozen=True)
class InferenceModel:
    config: RunConfig
    encoder: Encoder
    field_net: RadianceField
    checkpoint_hash: str = ""
    stage: int = 0

    def __post_init__(self):
        self.encoder.eval()
        self.field_net.eval()

    @property
    def render_settings(self) -> RenderConfig:
        r = self.config.render
        return RenderConfig(
            samples_per_ray=r.samples_per_ray,
            near=r.near,
            far=r.far,
            background=r.background,
            stochastic_depths=False,
        )

    @property
    def focal(self) -> float:
        return self.config.camera.focal

    def encode(self, image: Tensor) -> EncodedAttributes:
        return encode_image(self.encoder, image)

    def encode_patch(self, patch: Tensor) -> LatentCodes:
        return encode_patch_codes(self.encoder, patch)

    def render(self, attributes: EncodedAttributes, resolution: int | None = None) -> Tensor:
        resolution = resolution or self.config.data.resolution
        with torch.no_grad():
            return render_image(
                self.field_net,
                attributes.codes,
                attributes.pose,
                resolution,
                self.focal,
                self.render_settings,
                tile=min(self.config.patch.size, resolution),
            )

    def reconstruct(self, image: Tensor, resolution: int | None = None) -> Tensor:
        return self.render(self.encode(image), resolution)

    def orbit_pose(self, azimuth_deg: float, elevation_deg: float, radius: float) -> CameraPose:
        return pose_from_angles(azimuth_deg, elevation_deg, radius)
