"""Metrics and reports: reconstruction quality, latent/camera recovery,
swap fidelity against the oracle, set diversity, and code interpolation.

All metrics are pure functions of their inputs; reports are deterministic
given a model checkpoint and a test-set seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import torch
from scipy.spatial.transform import Rotation as ScipyRotation
from torch import Tensor
from torch.nn import functional as F

from .data import BACKGROUND, SwapTestTriple
from .encoder import EncodedAttributes
from .field import LatentCodes
from .geometry import CameraPose, geodesic_rotation_error
from .inference import InferenceModel
from .training import PseudoPair, swap_codes


class ShapeMismatch(ValueError):
    pass


class TooSmall(ValueError):
    pass


class EmptySet(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar image metrics


PSNR_CAP_DB = 100.0


def psnr(a: Tensor, b: Tensor) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; capped at 100 dB."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float((a.to(torch.float64) - b.to(torch.float64)).square().mean())
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype) -> Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def _ssim_terms(x: Tensor, y: Tensor, window: int) -> tuple[Tensor, Tensor]:
    """Mean luminance and contrast-structure SSIM terms per batch item.

    x, y: (B, C, H, W) in [0, 1].
    """
    c1, c2 = 0.01**2, 0.03**2
    w1d = _gaussian_window(window, 1.5, x.dtype)
    kernel = (w1d[:, None] * w1d[None, :]).expand(x.shape[1], 1, window, window)
    mu_x = F.conv2d(x, kernel, groups=x.shape[1])
    mu_y = F.conv2d(y, kernel, groups=x.shape[1])
    xx = F.conv2d(x * x, kernel, groups=x.shape[1]) - mu_x * mu_x
    yy = F.conv2d(y * y, kernel, groups=x.shape[1]) - mu_y * mu_y
    xy = F.conv2d(x * y, kernel, groups=x.shape[1]) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * xy + c2) / (xx + yy + c2)
    return lum.mean(dim=(1, 2, 3)), cs.mean(dim=(1, 2, 3))


def ms_ssim_scales(side: int) -> int:
    """Scale count adapted to resolution: floor(log2(side / 8)) + 1, max 5."""
    if side < 8:
        raise TooSmall(f"image side {side} below the smallest scale minimum 8")
    return min(5, int(math.floor(math.log2(side / 8))) + 1)


def ms_ssim_batch(a: Tensor, b: Tensor) -> Tensor:
    """Multi-scale structural similarity per batch pair; inputs (B, H, W, 3).

    Standard 5-scale weights renormalized to the available scale count;
    negative contrast-structure terms are clamped at zero (the usual
    remedy against NaNs from fractional powers), so values lie in [0, 1].
    """
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    side = min(a.shape[1], a.shape[2])
    scales = ms_ssim_scales(side)
    weights = torch.tensor(_MSSSIM_WEIGHTS[:scales], dtype=torch.float64)
    weights = weights / weights.sum()
    x = a.to(torch.float64).permute(0, 3, 1, 2)
    y = b.to(torch.float64).permute(0, 3, 1, 2)
    value = torch.ones(a.shape[0], dtype=torch.float64)
    for level in range(scales):
        window = min(11, min(x.shape[2], x.shape[3]))
        if window % 2 == 0:
            window -= 1
        lum, cs = _ssim_terms(x, y, window)
        if level < scales - 1:
            value = value * cs.clamp_min(0.0) ** float(weights[level])
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        else:
            value = value * (lum * cs).clamp_min(0.0) ** float(weights[level])
    return value


def ms_ssim(a: Tensor, b: Tensor) -> float:
    """MS-SSIM between two images (H, W, 3); symmetric, 1.0 iff identical."""
    return float(ms_ssim_batch(a[None], b[None])[0])


def set_diversity(images: Tensor, chunk: int = 256) -> float:
    """Mean pairwise MS-SSIM over a set; high values mean low diversity."""
    n = images.shape[0]
    if n < 2:
        raise EmptySet("diversity needs at least two images")
    ii, jj = torch.triu_indices(n, n, offset=1)
    values = []
    for start in range(0, ii.shape[0], chunk):
        sel_i = ii[start : start + chunk]
        sel_j = jj[start : start + chunk]
        values.append(ms_ssim_batch(images[sel_i], images[sel_j]))
    return float(torch.cat(values).mean())


# ---------------------------------------------------------------------------
# foreground / silhouette helpers

FOREGROUND_TOL = 2.0 / 255.0


def foreground_mask(image: Tensor, background: tuple[float, float, float] = BACKGROUND) -> Tensor:
    """Pixels that differ from the background color by more than 2/255."""
    bg = torch.tensor(background, dtype=image.dtype)
    return (image - bg).abs().max(dim=-1).values > FOREGROUND_TOL


def silhouette_iou(a: Tensor, b: Tensor) -> float:
    """IoU of two boolean masks; empty-vs-empty counts as 1."""
    inter = float((a & b).sum())
    union = float((a | b).sum())
    return inter / union if union > 0 else 1.0


def foreground_mean_color(image: Tensor, mask: Tensor) -> Tensor:
    """Mean color over the mask; falls back to the whole image when empty."""
    if not bool(mask.any()):
        return image.mean(dim=(0, 1))
    return image[mask].mean(dim=0)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MetricSummary:
    name: str
    attribute: str
    mean: float
    median: float
    count: int


@dataclass
class EvalReport:
    """Per-metric scalar summaries plus config/checkpoint fingerprints."""

    metrics: list[MetricSummary] = field(default_factory=list)
    config_fingerprint: str = ""
    checkpoint_fingerprint: str = ""

    def add(self, name: str, attribute: str, values: list[float]) -> None:
        if not values:
            raise EmptySet(f"metric {name}/{attribute} has no samples")
        t = torch.tensor(values, dtype=torch.float64)
        if not bool(torch.isfinite(t).all()):
            raise ValueError(f"metric {name}/{attribute} contains non-finite values")
        self.metrics.append(
            MetricSummary(name, attribute, float(t.mean()), float(t.median()), len(values))
        )

    def get(self, name: str, attribute: str = "") -> MetricSummary:
        for m in self.metrics:
            if m.name == name and m.attribute == attribute:
                return m
        raise KeyError(f"no metric {name}/{attribute}")

    def to_lines(self) -> str:
        rows = [
            f"{m.name}\t{m.attribute or '-'}\t{m.mean:.6f}\t{m.median:.6f}\t{m.count}"
            for m in self.metrics
        ]
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_fingerprint": self.config_fingerprint,
                "checkpoint_fingerprint": self.checkpoint_fingerprint,
                "metrics": [m.__dict__ for m in self.metrics],
            },
            indent=2,
            sort_keys=True,
        )


def latent_recovery_report(
    encode_fn, pseudo_set: list[PseudoPair], checkpoint_fingerprint: str = ""
) -> EvalReport:
    """Latent and camera recovery errors against stored pseudo ground truth.

    ``encode_fn`` maps an image tensor to :class:`EncodedAttributes`.
    """
    if not pseudo_set:
        raise EmptySet("pseudo set is empty")
    shape_err, appearance_err, rot_err, radius_err = [], [], [], []
    for pair in pseudo_set:
        attrs = encode_fn(pair.image)
        shape_err.append(float(torch.linalg.norm(attrs.codes.shape - pair.shape_code)))
        appearance_err.append(
            float(torch.linalg.norm(attrs.codes.appearance - pair.appearance_code))
        )
        rot_err.append(float(geodesic_rotation_error(attrs.pose.rotation, pair.rotation)))
        radius_err.append(abs(attrs.pose.radius - pair.radius))
    report = EvalReport(checkpoint_fingerprint=checkpoint_fingerprint)
    report.add("latent_l2", "shape", shape_err)
    report.add("latent_l2", "appearance", appearance_err)
    report.add("rotation_geodesic_rad", "camera", rot_err)
    report.add("radius_abs_error", "camera", radius_err)
    return report


def mean_latent_error(report: EvalReport) -> float:
    """Single scalar for comparisons: average of the two code error means."""
    return 0.5 * (report.get("latent_l2", "shape").mean + report.get("latent_l2", "appearance").mean)


def swap_attributes_for_eval(
    a: EncodedAttributes, b: EncodedAttributes, attribute: str
) -> EncodedAttributes:
    """Attributes rendering "a with one attribute replaced from b".

    Matches the swap-test ground truth: the source keeps its own camera
    except for an explicit camera swap. (Training-time swaps move the pose
    with the shape code instead; evaluation targets pin it to the source.)
    """
    if attribute == "shape":
        swapped = swap_codes(a, b, "shape")
        return EncodedAttributes(codes=swapped.codes, pose=a.pose)
    if attribute == "appearance":
        return swap_codes(a, b, "appearance")
    if attribute == "camera":
        return EncodedAttributes(codes=a.codes, pose=b.pose)
    raise ValueError(f"unknown attribute {attribute!r}")


def swap_fidelity_report(
    model: InferenceModel, triples: list[SwapTestTriple], checkpoint_fingerprint: str = ""
) -> EvalReport:
    """Swap each triple through the model and score against the oracle render.

    PSNR for every attribute; silhouette IoU for shape and camera swaps;
    foreground mean-color error for appearance swaps.
    """
    if not triples:
        raise EmptySet("swap test set is empty")
    by_attr: dict[str, dict[str, list[float]]] = {}
    for triple in triples:
        enc_a = model.encode(triple.image_a)
        enc_b = model.encode(triple.image_b)
        attrs = swap_attributes_for_eval(enc_a, enc_b, triple.swapped_attribute)
        rendered = model.render(attrs, resolution=triple.ground_truth_swapped.shape[0])
        scores = by_attr.setdefault(
            triple.swapped_attribute, {"psnr": [], "iou": [], "color_error": []}
        )
        scores["psnr"].append(psnr(rendered, triple.ground_truth_swapped))
        gt_mask = foreground_mask(triple.ground_truth_swapped)
        if triple.swapped_attribute in ("shape", "camera"):
            scores["iou"].append(silhouette_iou(foreground_mask(rendered), gt_mask))
        else:
            got = foreground_mean_color(rendered, foreground_mask(rendered))
            want = foreground_mean_color(triple.ground_truth_swapped, gt_mask)
            scores["color_error"].append(float(torch.linalg.norm(got - want)))
    report = EvalReport(checkpoint_fingerprint=checkpoint_fingerprint)
    for attribute, scores in sorted(by_attr.items()):
        for name, values in scores.items():
            if values:
                report.add(name, attribute, values)
    return report


# ---------------------------------------------------------------------------
# attribute interpolation


def _interpolate_rotation(r_a: Tensor, r_b: Tensor, t: float) -> Tensor:
    """Geodesic interpolation R_a. exp(t log(R_a^T R_b)); linear in t, so
    values outside [0, 1] extrapolate along the same geodesic."""
    rel = (r_a.T @ r_b).to(torch.float64).numpy()
    rotvec = ScipyRotation.from_matrix(rel).as_rotvec()
    step = ScipyRotation.from_rotvec(t * rotvec).as_matrix()
    out = r_a.to(torch.float64) @ torch.from_numpy(step)
    return out.to(r_a.dtype)


def interpolate_codes(
    a: EncodedAttributes, b: EncodedAttributes, t: float, mask: str = "all"
) -> EncodedAttributes:
    """Interpolate the masked attributes from a toward b.

    Codes and radius interpolate linearly, rotations along the geodesic;
    t outside [0, 1] extrapolates. Unmasked attributes come from ``a``.
    """
    if mask not in ("shape", "appearance", "camera", "all"):
        raise ValueError(f"unknown mask {mask!r}")
    if a.codes.shape.shape != b.codes.shape.shape:
        raise ShapeMismatch("shape code dims differ")
    if a.codes.appearance.shape != b.codes.appearance.shape:
        raise ShapeMismatch("appearance code dims differ")
    if t == 0.0:
        return a
    if t == 1.0 and mask == "all":
        return b

    def lerp(x: Tensor, y: Tensor) -> Tensor:
        return (1.0 - t) * x + t * y

    shape = a.codes.shape
    appearance = a.codes.appearance
    pose = a.pose
    if mask in ("shape", "all"):
        shape = lerp(a.codes.shape, b.codes.shape)
    if mask in ("appearance", "all"):
        appearance = lerp(a.codes.appearance, b.codes.appearance)
    if mask in ("camera", "all"):
        rotation = _interpolate_rotation(a.pose.rotation, b.pose.rotation, t)
        radius = (1.0 - t) * a.pose.radius + t * b.pose.radius
        pose = CameraPose(rotation=rotation, radius=radius)
    return EncodedAttributes(codes=LatentCodes(shape=shape, appearance=appearance), pose=pose)
