"""Image encoder: convolutional backbone with GAP and three attribute heads.

One network serves both full images and patches: global average pooling
after the backbone yields a fixed-length feature for any input whose side
is at least twice the total downsampling factor. The camera head predicts
a 6D rotation plus a radius scalar; the world-to-camera translation is
always derived from those, never predicted.

Patch hiding (masking a rectangle of the input with a fill color) lives
here too since it is an encoder-input corruption.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .field import LatentCodes
from .geometry import CameraPose, PatchSpec, camera_translation, rot6d_head_to_matrix


class BadResolution(ValueError):
    """Input image too small for the backbone."""


class OutOfBounds(ValueError):
    """Patch region does not fit the image."""


@dataclass(frozen=True)
class EncoderConfig:
    shape_dim: int = 32
    appearance_dim: int = 32
    channels: tuple[int, ...] = (32, 64, 96, 128, 128, 128)
    fc_width: int = 256
    radius_floor: float = 0.5

    @property
    def downsampling(self) -> int:
        # Strides are 2 for the first four conv layers, 1 afterwards.
        return 2 ** min(4, len(self.channels))

    @property
    def min_resolution(self) -> int:
        return 2 * self.downsampling


@dataclass(frozen=True)
class EncodedAttributes:
    """Encoder output triple: latent codes plus camera pose."""

    codes: LatentCodes
    pose: CameraPose


def _seeded_init(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.ndim == 4 else 1)
            bound = (1.0 / fan_in) ** 0.5
            with torch.no_grad():
                m.weight.uniform_(-(3.0**0.5) * bound, (3.0**0.5) * bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)


class Encoder(nn.Module):
    """Backbone + GAP + two shared FC layers + shape/appearance/camera heads.

    Group normalization keeps the features independent of batch
    composition in every mode, which the determinism contract relies on.
    """

    def __init__(self, config: EncoderConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        gen = generator if generator is not None else torch.Generator().manual_seed(0)
        layers: list[nn.Module] = []
        prev = 3
        for i, ch in enumerate(config.channels):
            stride = 2 if i < 4 else 1
            layers += [
                nn.Conv2d(prev, ch, kernel_size=3, stride=stride, padding=1),
                nn.GroupNorm(8, ch),
                nn.ReLU(inplace=True),
            ]
            prev = ch
        self.backbone = nn.Sequential(*layers)
        w = config.fc_width
        self.fc = nn.Sequential(
            nn.Linear(prev, w),
            nn.LayerNorm(w),
            nn.ReLU(inplace=True),
            nn.Linear(w, w),
            nn.LayerNorm(w),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.shape_head = nn.Linear(w, config.shape_dim)
        self.appearance_head = nn.Linear(w, config.appearance_dim)
        self.camera_head = nn.Linear(w, 7)
        _seeded_init(self, gen)
        # Bias the raw 6D output toward a valid frame so untrained poses are
        # well-conditioned rather than near-degenerate.
        with torch.no_grad():
            self.camera_head.bias[:6] = torch.tensor([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

    def forward(self, images: Tensor) -> dict[str, Tensor]:
        """Encode a batch of images.

        Args:
            images: (B, H, W, 3) in [0, 1].

        Returns:
            dict with ``shape`` (B, d_s), ``appearance`` (B, d_a),
            ``rot6d`` (B, 6) and ``radius`` (B,) tensors.
        """
        if images.ndim != 4 or images.shape[-1] != 3:
            raise BadResolution(f"expected (B, H, W, 3) input, got {tuple(images.shape)}")
        h, w = images.shape[1], images.shape[2]
        if min(h, w) < self.config.min_resolution:
            raise BadResolution(
                f"input side {min(h, w)} below minimum {self.config.min_resolution}"
            )
        feat = self.backbone(images.permute(0, 3, 1, 2))
        feat = feat.mean(dim=(2, 3))  # GAP: resolution independence
        feat = self.fc(feat)
        cam = self.camera_head(feat)
        radius = nn.functional.softplus(cam[:, 6]) + self.config.radius_floor
        return {
            "shape": self.shape_head(feat),
            "appearance": self.appearance_head(feat),
            "rot6d": cam[:, :6],
            "radius": radius,
        }


def encode(encoder: Encoder, image: Tensor) -> EncodedAttributes:
    """Encode one image into latent codes plus a camera pose (inference mode)."""
    with torch.no_grad():
        out = encoder(image[None])
    rotation = rot6d_head_to_matrix(out["rot6d"][0])
    return EncodedAttributes(
        codes=LatentCodes(shape=out["shape"][0], appearance=out["appearance"][0]),
        pose=CameraPose(rotation=rotation, radius=float(out["radius"][0])),
    )


def encode_patch(encoder: Encoder, patch: Tensor) -> LatentCodes:
    """Extract latent codes from a patch; the camera head output is discarded."""
    with torch.no_grad():
        out = encoder(patch[None])
    return LatentCodes(shape=out["shape"][0], appearance=out["appearance"][0])


def patch_pixel_bounds(spec: PatchSpec, height: int, width: int) -> tuple[int, int, int, int]:
    """Integer pixel bounds (row0, row1, col0, col1) covered by a patch spec."""
    u, v = spec.center
    half = spec.scale / 2.0
    c0 = max(0, int(round((u - half) * width)))
    c1 = min(width, int(round((u + half) * width)))
    r0 = max(0, int(round((v - half) * height)))
    r1 = min(height, int(round((v + half) * height)))
    return r0, r1, c0, c1


def hide_patch(
    image: Tensor, spec: PatchSpec, fill: Tensor | tuple[float, float, float]
) -> tuple[Tensor, tuple[int, int, int, int]]:
    """Replace the pixels under a patch with a fill color.

    Returns the corrupted copy and the hidden region bounds; pixels outside
    the region are bit-identical to the input.
    """
    if image.ndim != 3 or image.shape[-1] != 3:
        raise OutOfBounds(f"expected (H, W, 3) image, got {tuple(image.shape)}")
    r0, r1, c0, c1 = patch_pixel_bounds(spec, image.shape[0], image.shape[1])
    if r1 <= r0 or c1 <= c0:
        raise OutOfBounds("patch region is empty after clamping to the image")
    out = image.clone()
    out[r0:r1, c0:c1, :] = torch.as_tensor(fill, dtype=image.dtype)
    return out, (r0, r1, c0, c1)


def predicted_pose_tensors(rot6d: Tensor, radius: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable (rotation, radius, translation) from raw head outputs."""
    rotation = rot6d_head_to_matrix(rot6d)
    translation = camera_translation(rotation, radius)
    return rotation, radius, translation
