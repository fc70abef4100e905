"""Differentiable volume rendering of virtual patches.

Standard emission-absorption quadrature: stratified depths along each ray,
alpha from density and sample spacing, transmittance-weighted color sums,
with the leftover transmittance hitting a solid background color. Every
step is a plain tensor op, so gradients flow to the field parameters, the
latent codes and (through the ray geometry) the camera pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .field import LatentCodes, RadianceField
from .geometry import CameraPose, InvalidRange, PatchSpec, patch_pixel_grid, pixel_rays


@dataclass(frozen=True)
class RenderConfig:
    """Quadrature and background settings for patch rendering."""

    samples_per_ray: int = 32
    near: float = 1.0
    far: float = 5.0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    stochastic_depths: bool = False

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise InvalidRange("samples_per_ray must be >= 2")
        if not self.near < self.far:
            raise InvalidRange("near must be < far")


def stratified_depths(
    near: float,
    far: float,
    n: int,
    rng: torch.Generator | None = None,
    stochastic: bool = False,
    rays: int = 1,
    dtype: torch.dtype = torch.float32,
) -> Tensor:
    """Depth samples in [near, far]: bin midpoints, or one uniform jitter per bin.

    Returns shape (rays, n); strictly increasing along the last axis.
    """
    if not near < far:
        raise InvalidRange("near must be < far")
    if n < 2:
        raise InvalidRange("need at least two samples per ray")
    edges = torch.linspace(0.0, 1.0, n + 1, dtype=dtype)[:-1]
    if stochastic:
        jitter = torch.rand(rays, n, generator=rng, dtype=dtype)
    else:
        jitter = torch.full((rays, n), 0.5, dtype=dtype)
    return near + (far - near) * (edges + jitter / n)


def composite_rays(
    densities: Tensor,
    colors: Tensor,
    depths: Tensor,
    far: float,
    background: Tensor,
) -> tuple[Tensor, Tensor, Tensor]:
    """Alpha-composite samples along each ray.

    alpha_i = 1 - exp(-sigma_i * delta_i) with delta the gap to the next
    sample (the last gap runs to ``far``); weights w_i = T_i * alpha_i with
    T_i the product of (1 - alpha) before i. The output color is
    sum(w_i c_i) + T_final * background, a convex combination, hence
    bounded in [0, 1] without clamping.

    Args:
        densities: (..., N) non-negative.
        colors: (..., N, 3) in [0, 1].
        depths: (..., N) increasing.
        far: scalar far bound.
        background: (3,) background color.

    Returns:
        color (..., 3), weights (..., N), final transmittance (...,).
    """
    deltas = torch.cat([depths[..., 1:] - depths[..., :-1], far - depths[..., -1:]], dim=-1)
    alpha = 1.0 - torch.exp(-densities * deltas)
    keep = 1.0 - alpha
    trans = torch.cumprod(
        torch.cat([torch.ones_like(keep[..., :1]), keep], dim=-1), dim=-1
    )
    weights = trans[..., :-1] * alpha
    color = (weights[..., None] * colors).sum(-2) + trans[..., -1:] * background
    return color, weights, trans[..., -1]


def render_patches(
    field: RadianceField,
    shape_codes: Tensor,
    appearance_codes: Tensor,
    rotations: Tensor,
    radii: Tensor,
    centers: Tensor,
    scales: Tensor,
    size: int,
    focal: float,
    config: RenderConfig,
    rng: torch.Generator | None = None,
) -> Tensor:
    """Render a batch of K x K patches, one camera/code set per patch.

    Args:
        shape_codes: (B, shape_dim); appearance_codes: (B, appearance_dim).
        rotations: (B, 3, 3) camera-to-world; radii: (B,).
        centers: (B, 2) patch centers; scales: (B,) patch scales.

    Returns:
        (B, K, K, 3) patch images in [0, 1], differentiable w.r.t. codes,
        field parameters and camera parameters.
    """
    b = shape_codes.shape[0]
    n = config.samples_per_ray
    dtype = shape_codes.dtype
    grid = patch_pixel_grid(centers, scales, size)  # (B, K, K, 2)
    origins, dirs = pixel_rays(rotations, radii, grid, focal)  # (B, K, K, 3)
    origins = origins.reshape(b, size * size, 3)
    dirs = dirs.reshape(b, size * size, 3)
    depths = stratified_depths(
        config.near,
        config.far,
        n,
        rng=rng,
        stochastic=config.stochastic_depths,
        rays=b * size * size,
        dtype=dtype,
    ).reshape(b, size * size, n)
    points = origins[..., None, :] + depths[..., None] * dirs[..., None, :]
    view = dirs[..., None, :].expand(b, size * size, n, 3)
    density, color = field(
        points,
        view,
        shape_codes[:, None, None, :],
        appearance_codes[:, None, None, :],
    )
    background = torch.as_tensor(config.background, dtype=dtype)
    out, _, _ = composite_rays(density, color, depths, config.far, background)
    return out.reshape(b, size, size, 3)


def render_patch(
    field: RadianceField,
    codes: LatentCodes,
    pose: CameraPose,
    spec: PatchSpec,
    config: RenderConfig,
    focal: float,
    rng: torch.Generator | None = None,
) -> Tensor:
    """Render a single patch; returns (K, K, 3)."""
    dtype = codes.shape.dtype
    return render_patches(
        field,
        codes.shape[None],
        codes.appearance[None],
        pose.rotation[None].to(dtype),
        torch.as_tensor([pose.radius], dtype=dtype),
        torch.as_tensor([spec.center], dtype=dtype),
        torch.as_tensor([spec.scale], dtype=dtype),
        spec.size,
        focal,
        config,
        rng=rng,
    )[0]


def render_image(
    field: RadianceField,
    codes: LatentCodes,
    pose: CameraPose,
    resolution: int,
    focal: float,
    config: RenderConfig,
    tile: int = 32,
    rng: torch.Generator | None = None,
) -> Tensor:
    """Render a full image as a grid of aligned tiles sharing one pose.

    Tiles are axis-aligned patches whose virtual pixel grids coincide with
    the target image grid, so the result is identical to a single
    ``resolution``-sized patch render while bounding peak memory.
    """
    if resolution % tile != 0:
        tile = resolution
    per_side = resolution // tile
    scale = tile / resolution
    rows = []
    for iy in range(per_side):
        row = []
        for ix in range(per_side):
            spec = PatchSpec(
                center=((ix + 0.5) * scale, (iy + 0.5) * scale), scale=scale, size=tile
            )
            row.append(render_patch(field, codes, pose, spec, config, focal, rng=rng))
        rows.append(torch.cat(row, dim=1))
    return torch.cat(rows, dim=0)
