"""Factor-controlled synthetic scenes, swap test set, and image ingestion.

The oracle renders an axis-aligned ellipsoid (half-extents = the shape
factor) with a flat albedo on a white background via analytic ray
intersection, using the exact camera model of :mod:`aenerf.geometry`.
Because every image is a deterministic function of its factors, the
dataset doubles as a disentanglement oracle: silhouettes depend only on
(shape, pose) and foreground color only on albedo.

Default lighting is flat (pure albedo). A Lambertian directional light is
available but off by default: any appreciable directional term couples
shape into mean foreground color, which would break the invariant that
appearance metrics are shape-independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from .geometry import (
    CameraPose,
    PatchSpec,
    matrix_to_rot6d,
    patch_pixel_grid,
    pixel_rays,
    rot6d_to_matrix,
    sample_camera_poses,
)

GENERATOR_VERSION = "synth-ellipsoid-1"

SHAPE_RANGE = (0.3, 1.0)
ALBEDO_RANGE = (0.1, 1.0)

BACKGROUND = (1.0, 1.0, 1.0)


class UnreadableFile(RuntimeError):
    pass


class EmptyFolder(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleLighting:
    """Shading model: ``ambient + (1 - ambient) * max(0, n . light)``."""

    ambient: float = 1.0  # flat shading by default, see module docstring
    light_dir: tuple[float, float, float] = (0.4, -0.3, 0.87)


@dataclass(frozen=True)
class SceneFactors:
    """Ground-truth generative factors of one synthetic scene."""

    half_extents: tuple[float, float, float]
    albedo: tuple[float, float, float]
    pose: CameraPose

    def replace(self, attribute: str, other: "SceneFactors") -> "SceneFactors":
        """Copy with one named attribute taken from ``other``."""
        if attribute == "shape":
            return SceneFactors(other.half_extents, self.albedo, self.pose)
        if attribute == "appearance":
            return SceneFactors(self.half_extents, other.albedo, self.pose)
        if attribute == "camera":
            return SceneFactors(self.half_extents, self.albedo, other.pose)
        raise ValueError(f"unknown attribute {attribute!r}")


def oracle_render(
    factors: SceneFactors,
    resolution: int,
    focal: float,
    lighting: OracleLighting = OracleLighting(),
) -> Tensor:
    """Deterministic analytic render of the ellipsoid scene, (H, W, 3) in [0, 1]."""
    dtype = torch.float32
    centers = torch.tensor([[0.5, 0.5]], dtype=dtype)
    scales = torch.ones(1, dtype=dtype)
    grid = patch_pixel_grid(centers, scales, resolution)
    rot = factors.pose.rotation.to(dtype)[None]
    radius = torch.tensor([factors.pose.radius], dtype=dtype)
    origins, dirs = pixel_rays(rot, radius, grid, focal)
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)

    h = torch.tensor(factors.half_extents, dtype=dtype)
    os, ds = o / h, d / h
    a = (ds * ds).sum(-1)
    b = 2.0 * (os * ds).sum(-1)
    c = (os * os).sum(-1) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    t = (-b - torch.sqrt(disc.clamp_min(0.0))) / (2.0 * a)
    hit &= t > 0.0

    img = torch.ones(resolution * resolution, 3, dtype=dtype)
    img *= torch.tensor(BACKGROUND, dtype=dtype)
    if bool(hit.any()):
        p = o[hit] + t[hit, None] * d[hit]
        normal = torch.nn.functional.normalize(p / (h * h), dim=-1)
        light = torch.nn.functional.normalize(
            torch.tensor(lighting.light_dir, dtype=dtype), dim=-1
        )
        shade = lighting.ambient + (1.0 - lighting.ambient) * (normal @ light).clamp_min(0.0)
        img[hit] = torch.tensor(factors.albedo, dtype=dtype) * shade[:, None]
    return img.reshape(resolution, resolution, 3)


def _sample_factors(
    rng: torch.Generator,
    n: int,
    radius_range: tuple[float, float],
    elevation_range_deg: tuple[float, float],
) -> list[SceneFactors]:
    lo_s, hi_s = SHAPE_RANGE
    lo_a, hi_a = ALBEDO_RANGE
    shapes = lo_s + (hi_s - lo_s) * torch.rand(n, 3, generator=rng, dtype=torch.float64)
    albedos = lo_a + (hi_a - lo_a) * torch.rand(n, 3, generator=rng, dtype=torch.float64)
    rotations, radii = sample_camera_poses(rng, n, radius_range, elevation_range_deg)
    return [
        SceneFactors(
            half_extents=tuple(float(x) for x in shapes[i]),
            albedo=tuple(float(x) for x in albedos[i]),
            pose=CameraPose(rotation=rotations[i], radius=float(radii[i])),
        )
        for i in range(n)
    ]


@dataclass(frozen=True)
class SynthDataset:
    """Immutable bundle of rendered images and their generating factors."""

    images: Tensor  # (N, H, W, 3) float32 in [0, 1]
    factors: list[SceneFactors]
    seed: int
    focal: float

    def __len__(self) -> int:
        return self.images.shape[0]


def build_synth_dataset(
    n: int,
    resolution: int,
    seed: int,
    focal: float = 1.2,
    radius_range: tuple[float, float] = (2.8, 3.2),
    elevation_range_deg: tuple[float, float] = (10.0, 60.0),
    lighting: OracleLighting = OracleLighting(),
) -> SynthDataset:
    """Render ``n`` scenes with i.i.d. factors; replayable from the seed."""
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    rng = torch.Generator().manual_seed(seed)
    factors = _sample_factors(rng, n, radius_range, elevation_range_deg)
    images = torch.stack(
        [oracle_render(f, resolution, focal, lighting) for f in factors]
    )
    return SynthDataset(images=images, factors=factors, seed=seed, focal=focal)


@dataclass(frozen=True)
class SwapTestTriple:
    """Image pair plus the oracle render of a with one attribute from b."""

    image_a: Tensor
    image_b: Tensor
    ground_truth_swapped: Tensor
    swapped_attribute: str
    factors_a: SceneFactors
    factors_b: SceneFactors


SWAP_ATTRIBUTES = ("shape", "appearance", "camera")


def build_swap_test_set(
    n_per_attribute: int,
    resolution: int,
    seed: int,
    focal: float = 1.2,
    radius_range: tuple[float, float] = (2.8, 3.2),
    elevation_range_deg: tuple[float, float] = (10.0, 60.0),
    lighting: OracleLighting = OracleLighting(),
) -> list[SwapTestTriple]:
    """For each attribute, ``n`` pairs with the swapped ground-truth render."""
    if n_per_attribute < 1:
        raise ValueError("need at least one triple per attribute")
    rng = torch.Generator().manual_seed(seed)
    triples = []
    for attribute in SWAP_ATTRIBUTES:
        fa = _sample_factors(rng, n_per_attribute, radius_range, elevation_range_deg)
        fb = _sample_factors(rng, n_per_attribute, radius_range, elevation_range_deg)
        for a, b in zip(fa, fb):
            swapped = a.replace(attribute, b)
            triples.append(
                SwapTestTriple(
                    image_a=oracle_render(a, resolution, focal, lighting),
                    image_b=oracle_render(b, resolution, focal, lighting),
                    ground_truth_swapped=oracle_render(swapped, resolution, focal, lighting),
                    swapped_attribute=attribute,
                    factors_a=a,
                    factors_b=b,
                )
            )
    return triples


def to_uint8(image: Tensor) -> np.ndarray:
    return (image.clamp(0.0, 1.0) * 255.0).round().to(torch.uint8).numpy()


def from_uint8(array: np.ndarray) -> Tensor:
    return torch.from_numpy(array.astype(np.float32) / 255.0)


def save_dataset(dataset: SynthDataset, directory: str | Path) -> None:
    """Write the on-disk layout: images/NNNNNN.png, factors.jsonl, manifest.json."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / "factors.jsonl", "w") as fh:
        for i, factors in enumerate(dataset.factors):
            Image.fromarray(to_uint8(dataset.images[i])).save(root / "images" / f"{i:06d}.png")
            record = {
                "index": i,
                "shape": list(factors.half_extents),
                "albedo": list(factors.albedo),
                "rotation_6d": [float(x) for x in matrix_to_rot6d(factors.pose.rotation)],
                "radius": factors.pose.radius,
                "seed": dataset.seed,
            }
            fh.write(json.dumps(record) + "\n")
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "seed": dataset.seed,
        "count": len(dataset),
        "resolution": int(dataset.images.shape[1]),
        "focal": dataset.focal,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(directory: str | Path) -> SynthDataset:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    images, factors = [], []
    with open(root / "factors.jsonl") as fh:
        for line in fh:
            record = json.loads(line)
            path = root / "images" / f"{record['index']:06d}.png"
            images.append(from_uint8(np.asarray(Image.open(path).convert("RGB"))))
            rotation = rot6d_to_matrix(torch.tensor(record["rotation_6d"], dtype=torch.float32))
            factors.append(
                SceneFactors(
                    half_extents=tuple(record["shape"]),
                    albedo=tuple(record["albedo"]),
                    pose=CameraPose(rotation=rotation, radius=record["radius"]),
                )
            )
    return SynthDataset(
        images=torch.stack(images),
        factors=factors,
        seed=manifest["seed"],
        focal=manifest.get("focal", 1.2),
    )


_RASTER_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


def load_image(path: str | Path, resolution: int) -> Tensor:
    """Load one raster image: center-crop to square, resize, scale to [0, 1]."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
    except Exception as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    img = img.resize((resolution, resolution), Image.BILINEAR)
    return from_uint8(np.asarray(img))


def ingest_image_folder(path: str | Path, resolution: int) -> Tensor:
    """Load a folder of raster images: center-crop to square, resize, scale to [0, 1].

    Files are processed in lexicographic order; unreadable files are
    skipped with a warning, an empty result aborts.
    """
    root = Path(path)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in _RASTER_SUFFIXES)
    images = []
    for file in files:
        try:
            images.append(load_image(file, resolution))
        except UnreadableFile as exc:  # skip but keep going
            print(f"warning: skipping unreadable image {file.name}: {exc}")
    if not images:
        raise EmptyFolder(f"no readable raster images under {root}")
    return torch.stack(images)
