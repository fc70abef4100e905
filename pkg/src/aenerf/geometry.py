"""Camera poses, 6D rotation algebra, patch specs and pinhole ray generation.

Conventions used throughout the package:

* World frame is right-handed with +z up. Cameras sit on the upper
  hemisphere of a sphere around the world origin and look at the origin.
* ``CameraPose.rotation`` is the camera-to-world rotation: its columns are
  the camera x/y/z axes expressed in world coordinates. The camera looks
  along its own -z axis, so the third column is the unit vector from the
  origin toward the camera center.
* Image coordinates are normalized to [0, 1]^2 with x to the right and
  y downward; the principal point is (0.5, 0.5) and the focal length is
  expressed in image-width units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor


class GeometryError(ValueError):
    """Base class for geometry input errors."""


class DegenerateRotation(GeometryError):
    """Raised when a 6D rotation vector cannot be orthonormalized."""


class InvalidRange(GeometryError):
    """Raised for empty, inverted or out-of-bounds sampling ranges."""


# Norms below this are treated as zero when orthonormalizing 6D vectors.
DEGENERACY_EPS = 1e-8

_WORLD_UP = (0.0, 0.0, 1.0)


def rot6d_to_matrix(v: Tensor) -> Tensor:
    """Map a 6D rotation representation to rotation matrices via Gram-Schmidt.

    ``v`` holds two column-stacked 3-vectors ``(a1, a2)``. The result has
    columns ``b1 = a1/|a1|``, ``b2`` the normalized rejection of ``a2`` from
    ``b1``, and ``b3 = b1 x b2``, so it is orthonormal with det +1.

    Args:
        v: tensor of shape (..., 6).

    Raises:
        DegenerateRotation: if either half is (near) zero or the halves are
            parallel, making the Gram-Schmidt step ill-defined.
    """
    if v.shape[-1] != 6:
        raise GeometryError(f"expected (..., 6) input, got {tuple(v.shape)}")
    # The 1e-8 degeneracy tolerance only resolves in double precision;
    # orthonormalize there and cast back.
    w = v.to(torch.float64)
    a1, a2 = w[..., :3], w[..., 3:]
    n1 = torch.linalg.norm(a1, dim=-1, keepdim=True)
    if bool((n1 < DEGENERACY_EPS).any()):
        raise DegenerateRotation("first 3-vector of the 6D input is near zero")
    b1 = a1 / n1
    proj = (b1 * a2).sum(-1, keepdim=True)
    r2 = a2 - proj * b1
    n2 = torch.linalg.norm(r2, dim=-1, keepdim=True)
    if bool((n2 < DEGENERACY_EPS * torch.linalg.norm(a2, dim=-1, keepdim=True)).any()):
        raise DegenerateRotation("6D input halves are parallel or second half is near zero")
    b2 = r2 / n2
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1).to(v.dtype)


def matrix_to_rot6d(rotation: Tensor) -> Tensor:
    """Column-stack the first two columns of a rotation matrix.

    Inverse of :func:`rot6d_to_matrix` on exact rotations.
    """
    return torch.cat([rotation[..., :, 0], rotation[..., :, 1]], dim=-1)


def rot6d_head_to_matrix(v: Tensor) -> Tensor:
    """Differentiable 6D-to-matrix map for network heads.

    Identical construction to :func:`rot6d_to_matrix` but degenerate inputs
    are regularized instead of rejected, so gradients stay finite for any
    head output.
    """
    a1, a2 = v[..., :3], v[..., 3:]
    b1 = torch.nn.functional.normalize(a1, dim=-1, eps=DEGENERACY_EPS)
    r2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    b2 = torch.nn.functional.normalize(r2, dim=-1, eps=DEGENERACY_EPS)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def camera_translation(rotation: Tensor, radius: float | Tensor) -> Tensor:
    """Translation of the world-to-camera transform for a look-at-origin camera.

    With camera center ``C = radius * R[:, 2]`` and world-to-camera map
    ``X_cam = R^T (X - C)``, the translation is ``-R^T C``. For exact
    rotations this equals ``(0, 0, -radius)``; it is computed from the
    matrix so the identity ``R^T C + t = 0`` holds verbatim.

    Supports batched input ``(..., 3, 3)`` with matching radius shape.
    """
    if not torch.is_tensor(radius):
        radius = torch.as_tensor(radius, dtype=rotation.dtype)
    center = radius[..., None] * rotation[..., :, 2] if radius.ndim else radius * rotation[..., :, 2]
    return -(rotation.transpose(-1, -2) @ center[..., None])[..., 0]


def look_at_rotation(center: Tensor, up: tuple[float, float, float] = _WORLD_UP) -> Tensor:
    """Camera-to-world rotation for a camera at ``center`` looking at the origin.

    The camera -z axis points from ``center`` to the origin; x is chosen
    perpendicular to the world up vector (falling back to world x when the
    view direction is parallel to up, e.g. straight above the pole).
    """
    z_axis = torch.nn.functional.normalize(center, dim=-1)
    up_t = torch.as_tensor(up, dtype=center.dtype).expand_as(z_axis)
    # Degenerate when looking straight down the up axis.
    parallel = (torch.linalg.cross(up_t, z_axis, dim=-1).norm(dim=-1, keepdim=True) < 1e-8)
    alt = torch.as_tensor((1.0, 0.0, 0.0), dtype=center.dtype).expand_as(z_axis)
    up_eff = torch.where(parallel, alt, up_t)
    x_axis = torch.nn.functional.normalize(torch.linalg.cross(up_eff, z_axis, dim=-1), dim=-1)
    y_axis = torch.linalg.cross(z_axis, x_axis, dim=-1)
    return torch.stack([x_axis, y_axis, z_axis], dim=-1)


@dataclass(frozen=True)
class CameraPose:
    """Camera on (or parameterized like) the look-at-origin sphere.

    ``rotation`` is camera-to-world; ``radius`` the distance of the camera
    center from the origin. The world-to-camera translation is always
    derived via :func:`camera_translation`, never stored independently.
    Canonically sampled poses additionally lie on the upper hemisphere
    (center z >= 0); predicted poses are only guaranteed orthonormal.
    """

    rotation: Tensor
    radius: float

    def __post_init__(self):
        rot = torch.as_tensor(self.rotation)
        if rot.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {tuple(rot.shape)}")
        err = (rot.T @ rot - torch.eye(3, dtype=rot.dtype)).abs().max()
        if float(err) > 1e-4:
            raise GeometryError(f"rotation not orthonormal (max error {float(err):.2e})")
        if float(torch.linalg.det(rot)) < 0.0:
            raise GeometryError("rotation has negative determinant")
        if self.radius <= 0.0:
            raise GeometryError("radius must be positive")
        object.__setattr__(self, "rotation", rot)

    @property
    def center(self) -> Tensor:
        """Camera center in world coordinates."""
        return self.radius * self.rotation[:, 2]

    @property
    def translation(self) -> Tensor:
        """Derived world-to-camera translation."""
        return camera_translation(self.rotation, self.radius)

    def to_rot6d(self) -> Tensor:
        return matrix_to_rot6d(self.rotation)


def _check_range(lo: float, hi: float, name: str) -> None:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise InvalidRange(f"{name} range [{lo}, {hi}] is empty or inverted")


def sample_camera_poses(
    rng: torch.Generator,
    n: int,
    radius_range: tuple[float, float],
    elevation_range_deg: tuple[float, float] = (0.0, 90.0),
    dtype: torch.dtype = torch.float32,
) -> tuple[Tensor, Tensor]:
    """Sample ``n`` look-at-origin cameras uniformly by area on a hemisphere band.

    Azimuth is uniform on [0, 2pi); the center height ``z = sin(elevation)``
    is uniform over the band (uniform surface measure); radius is uniform
    over ``radius_range``. Elevation is measured up from the horizon in
    degrees and must lie in [0, 90].

    Returns:
        (rotations, radii) with shapes (n, 3, 3) and (n,).
    """
    r_lo, r_hi = radius_range
    _check_range(r_lo, r_hi, "radius")
    if r_lo <= 0.0:
        raise InvalidRange("radius range must be positive")
    e_lo, e_hi = elevation_range_deg
    _check_range(e_lo, e_hi, "elevation")
    if e_lo < 0.0 or e_hi > 90.0:
        raise InvalidRange("elevation range must lie within [0, 90] degrees")

    u = torch.rand(n, 3, generator=rng, dtype=dtype)
    azimuth = u[:, 0] * (2.0 * math.pi)
    z_lo, z_hi = math.sin(math.radians(e_lo)), math.sin(math.radians(e_hi))
    z = z_lo + (z_hi - z_lo) * u[:, 1]
    radii = r_lo + (r_hi - r_lo) * u[:, 2]
    horiz = torch.sqrt((1.0 - z * z).clamp_min(0.0))
    center_dir = torch.stack([horiz * torch.cos(azimuth), horiz * torch.sin(azimuth), z], dim=-1)
    return look_at_rotation(center_dir), radii


def sample_camera_pose(
    rng: torch.Generator,
    radius_range: tuple[float, float],
    elevation_range_deg: tuple[float, float] = (0.0, 90.0),
) -> CameraPose:
    """Single-pose convenience wrapper around :func:`sample_camera_poses`."""
    rot, radii = sample_camera_poses(rng, 1, radius_range, elevation_range_deg)
    return CameraPose(rotation=rot[0], radius=float(radii[0]))


@dataclass(frozen=True)
class PatchSpec:
    """Virtual K x K pixel grid with normalized center and scale.

    The patch spans ``scale`` of the unit image side; the center is clamped
    at construction so the whole patch lies inside [0, 1]^2.
    """

    center: tuple[float, float]
    scale: float
    size: int = 32

    def __post_init__(self):
        if self.size < 2:
            raise GeometryError("patch size must be >= 2")
        if not 0.0 < self.scale <= 1.0:
            raise GeometryError(f"patch scale must lie in (0, 1], got {self.scale}")
        half = self.scale / 2.0
        u = min(max(self.center[0], half), 1.0 - half)
        v = min(max(self.center[1], half), 1.0 - half)
        object.__setattr__(self, "center", (u, v))

    @classmethod
    def full_image(cls, size: int) -> "PatchSpec":
        return cls(center=(0.5, 0.5), scale=1.0, size=size)


def sample_patch_spec(
    rng: torch.Generator,
    size: int,
    scale_range: tuple[float, float],
) -> PatchSpec:
    """Draw a patch spec with uniform scale and uniform admissible center."""
    s_lo, s_hi = scale_range
    _check_range(s_lo, s_hi, "scale")
    if s_lo <= 0.0 or s_hi > 1.0:
        raise InvalidRange("scale range must lie within (0, 1]")
    u = torch.rand(3, generator=rng, dtype=torch.float64)
    scale = s_lo + (s_hi - s_lo) * float(u[0])
    half = scale / 2.0
    cu = half + (1.0 - 2.0 * half) * float(u[1])
    cv = half + (1.0 - 2.0 * half) * float(u[2])
    return PatchSpec(center=(cu, cv), scale=scale, size=size)


def patch_pixel_grid(
    centers: Tensor,
    scales: Tensor,
    size: int,
) -> Tensor:
    """Normalized image coordinates of the K x K virtual pixel centers.

    Args:
        centers: (B, 2) patch centers (u, v).
        scales: (B,) patch scales.
        size: K.

    Returns:
        (B, K, K, 2) coordinates, last axis (x, y); row index varies y.
    """
    offs = (torch.arange(size, dtype=centers.dtype) + 0.5) / size - 0.5
    gy, gx = torch.meshgrid(offs, offs, indexing="ij")
    grid = torch.stack([gx, gy], dim=-1)  # (K, K, 2)
    return centers[:, None, None, :] + scales[:, None, None, None] * grid


@dataclass(frozen=True)
class RayBundle:
    """Per-pixel rays of one patch: origins, unit directions, depth bounds."""

    origins: Tensor
    directions: Tensor
    near: float
    far: float

    def __post_init__(self):
        if self.origins.shape != self.directions.shape or self.origins.shape[-1] != 3:
            raise GeometryError("origins/directions must both have shape (n, 3)")
        if not self.near < self.far:
            raise GeometryError("near must be < far")


def pixel_rays(
    rotations: Tensor,
    radii: Tensor,
    pixels: Tensor,
    focal: float,
) -> tuple[Tensor, Tensor]:
    """World-space rays through normalized pixel coordinates.

    Camera-frame direction of pixel (px, py) is
    ``((px - 0.5)/f, -(py - 0.5)/f, -1)`` (y grows downward in the image,
    camera looks along -z), rotated to world and normalized.

    Args:
        rotations: (B, 3, 3) camera-to-world rotations.
        radii: (B,) camera distances.
        pixels: (B, ..., 2) normalized coordinates.
        focal: focal length in image-width units.

    Returns:
        origins, directions of shape (B, ..., 3); origins all equal the
        camera centers.
    """
    if focal <= 0.0:
        raise GeometryError("focal must be positive")
    d_cam = torch.stack(
        [
            (pixels[..., 0] - 0.5) / focal,
            -(pixels[..., 1] - 0.5) / focal,
            -torch.ones_like(pixels[..., 0]),
        ],
        dim=-1,
    )
    extra = pixels.ndim - 2  # pixel grid dims the rotation broadcasts over
    rot = rotations.view(rotations.shape[0], *([1] * extra), 3, 3)
    d_world = (rot @ d_cam[..., None])[..., 0]
    d_world = torch.nn.functional.normalize(d_world, dim=-1)
    centers = radii[..., None] * rotations[..., :, 2]
    origins = centers.view(centers.shape[0], *([1] * extra), 3).expand_as(d_world)
    return origins, d_world


def patch_rays(
    pose: CameraPose,
    focal: float,
    spec: PatchSpec,
    near: float,
    far: float,
) -> RayBundle:
    """One pinhole ray per virtual pixel of the patch, row-major order."""
    centers = torch.as_tensor([spec.center], dtype=pose.rotation.dtype)
    scales = torch.as_tensor([spec.scale], dtype=pose.rotation.dtype)
    grid = patch_pixel_grid(centers, scales, spec.size)
    radii = torch.as_tensor([pose.radius], dtype=pose.rotation.dtype)
    origins, dirs = pixel_rays(pose.rotation[None], radii, grid, focal)
    k2 = spec.size * spec.size
    return RayBundle(origins=origins.reshape(k2, 3), directions=dirs.reshape(k2, 3), near=near, far=far)


def project_points(pose: CameraPose, points: Tensor, focal: float) -> Tensor:
    """Project world points to normalized image coordinates (pinhole model)."""
    p_cam = (pose.rotation.T @ (points - pose.center)[..., None])[..., 0]
    depth = -p_cam[..., 2]
    return torch.stack(
        [0.5 + focal * p_cam[..., 0] / depth, 0.5 - focal * p_cam[..., 1] / depth],
        dim=-1,
    )


def pose_from_angles(azimuth_deg: float, elevation_deg: float, radius: float) -> CameraPose:
    """Deterministic look-at-origin pose from spherical angles.

    Azimuth is measured in the xy-plane from +x, elevation up from the
    horizon; both in degrees.
    """
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    direction = torch.tensor(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)],
        dtype=torch.float32,
    )
    return CameraPose(rotation=look_at_rotation(direction[None])[0], radius=radius)


def pose_angles(pose: CameraPose) -> tuple[float, float]:
    """(azimuth_deg, elevation_deg) of the camera center direction."""
    c = pose.center
    norm = float(torch.linalg.norm(c))
    azimuth = math.degrees(math.atan2(float(c[1]), float(c[0])))
    elevation = math.degrees(math.asin(max(-1.0, min(1.0, float(c[2]) / norm))))
    return azimuth, elevation


def geodesic_rotation_error(r1: Tensor, r2: Tensor) -> Tensor:
    """Geodesic angle between two rotations: arccos((tr(R1^T R2) - 1) / 2)."""
    rel = r1.transpose(-1, -2) @ r2
    trace = rel.diagonal(dim1=-2, dim2=-1).sum(-1)
    return torch.arccos(((trace - 1.0) / 2.0).clamp(-1.0, 1.0))
