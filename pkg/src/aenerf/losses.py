"""Training objectives and their auxiliary networks.

Covers the full set used across the three training stages: pixel
reconstruction, perceptual reconstruction, non-saturating adversarial
losses with R1 gradient penalty, swapped-attribute classification,
global-local attribute consistency, and the pseudo-pair latent/camera
supervision. Image losses are means over pixels/channels so the default
weights are resolution independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .encoder import Encoder
from .geometry import camera_translation


class ShapeMismatch(ValueError):
    """Operands have incompatible shapes."""


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for each objective (means-based defaults)."""

    render: float = 1.0
    perceptual: float = 0.1
    pseudo: float = 1.0
    gan: float = 0.5
    glac: float = 0.1
    swac: float = 0.1
    r1: float = 10.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value >= 0.0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")


def _seeded_init(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.ndim == 4 else 1)
            bound = (1.0 / fan_in) ** 0.5
            with torch.no_grad():
                m.weight.uniform_(-(3.0**0.5) * bound, (3.0**0.5) * bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)


class PatchDiscriminator(nn.Module):
    """PatchGAN-style convolutional discriminator over K x K x 3 inputs.

    Produces a spatial map of real/fake logits; losses average over it.
    """

    def __init__(self, channels: tuple[int, ...] = (32, 64, 128), generator: torch.Generator | None = None):
        super().__init__()
        gen = generator if generator is not None else torch.Generator().manual_seed(0)
        layers: list[nn.Module] = []
        prev = 3
        for ch in channels:
            layers += [
                nn.Conv2d(prev, ch, kernel_size=4, stride=2, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            prev = ch
        layers.append(nn.Conv2d(prev, 1, kernel_size=3, stride=1, padding=1))
        self.net = nn.Sequential(*layers)
        _seeded_init(self, gen)

    def forward(self, patches: Tensor) -> Tensor:
        """(B, K, K, 3) -> (B, L) real/fake logit per spatial location."""
        logits = self.net(patches.permute(0, 3, 1, 2))
        return logits.flatten(1)


class SwapClassifier(nn.Module):
    """Binary classifier over channel-stacked (I_patch, J_patch, swap render).

    Outputs one logit per triple; label 0 means the shape attribute was
    swapped, label 1 the appearance attribute.
    """

    def __init__(self, channels: tuple[int, ...] = (32, 64, 128), generator: torch.Generator | None = None):
        super().__init__()
        gen = generator if generator is not None else torch.Generator().manual_seed(0)
        layers: list[nn.Module] = []
        prev = 9
        for ch in channels:
            layers += [
                nn.Conv2d(prev, ch, kernel_size=4, stride=2, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            prev = ch
        self.conv = nn.Sequential(*layers)
        self.fc = nn.Sequential(nn.Linear(prev, 64), nn.LeakyReLU(0.2, inplace=True), nn.Linear(64, 1))
        _seeded_init(self, gen)

    def forward(self, i_patch: Tensor, j_patch: Tensor, swap_render: Tensor) -> Tensor:
        """Each input (B, K, K, 3); returns (B,) logits."""
        if not i_patch.shape == j_patch.shape == swap_render.shape:
            raise ShapeMismatch("classifier inputs must share one patch shape")
        stacked = torch.cat([i_patch, j_patch, swap_render], dim=-1).permute(0, 3, 1, 2)
        feat = self.conv(stacked).mean(dim=(2, 3))
        return self.fc(feat)[:, 0]


class RandomFeatureExtractor(nn.Module):
    """Fixed, seed-deterministic conv feature bank for the perceptual loss.

    Stands in for a pretrained first-block extractor so tests need no
    downloaded weights; it is never trained.
    """

    def __init__(self, channels: tuple[int, ...] = (16, 32, 64), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers: list[nn.Module] = []
        prev = 3
        for i, ch in enumerate(channels):
            layers += [
                nn.Conv2d(prev, ch, kernel_size=3, stride=1 if i == 0 else 2, padding=1),
                nn.LeakyReLU(0.2),
            ]
            prev = ch
        self.net = nn.Sequential(*layers)
        _seeded_init(self, gen)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, patches: Tensor) -> Tensor:
        return self.net(patches.permute(0, 3, 1, 2))


def render_loss(target: Tensor, rendered: Tensor) -> Tensor:
    """Mean squared error between a target patch and a rendered patch."""
    if target.shape != rendered.shape:
        raise ShapeMismatch(f"{tuple(target.shape)} vs {tuple(rendered.shape)}")
    return (target - rendered).square().mean()


def perceptual_loss(extractor: nn.Module, target: Tensor, rendered: Tensor) -> Tensor:
    """MSE between feature maps; the target is treated as a constant."""
    if target.shape != rendered.shape:
        raise ShapeMismatch(f"{tuple(target.shape)} vs {tuple(rendered.shape)}")
    batched_t = target if target.ndim == 4 else target[None]
    batched_r = rendered if rendered.ndim == 4 else rendered[None]
    return (extractor(batched_t.detach()) - extractor(batched_r)).square().mean()


def r1_penalty(disc: nn.Module, real: Tensor) -> Tensor:
    """Squared gradient norm of the discriminator at real samples."""
    real = real.detach().requires_grad_(True)
    logits = disc(real)
    (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
    return grad.square().sum(dim=(1, 2, 3)).mean()


def discriminator_loss(
    disc: nn.Module, real: Tensor, fake: Tensor, r1_weight: float
) -> tuple[Tensor, dict[str, float]]:
    """Non-saturating discriminator objective plus R1 penalty on real data.

    ``fake`` must be detached from the generator graph. Returns the loss
    and a breakdown for logging.
    """
    adv = nn.functional.softplus(-disc(real)).mean() + nn.functional.softplus(disc(fake)).mean()
    if r1_weight > 0.0:
        penalty = r1_penalty(disc, real)
        loss = adv + 0.5 * r1_weight * penalty
    else:
        penalty = torch.zeros((), dtype=adv.dtype)
        loss = adv
    return loss, {"adversarial": float(adv.detach()), "r1": float(penalty.detach())}


def generator_loss(disc: nn.Module, fake: Tensor) -> Tensor:
    """Non-saturating generator objective: mean softplus(-D(fake))."""
    return nn.functional.softplus(-disc(fake)).mean()


def swac_loss(
    classifier: SwapClassifier,
    i_patch: Tensor,
    j_patch: Tensor,
    shape_swap_render: Tensor,
    appearance_swap_render: Tensor,
) -> Tensor:
    """Symmetric binary cross-entropy over the two swap triples.

    The shape-swapped render takes label 0, the appearance-swapped render
    label 1; the two BCE terms are summed. Gradients reach the classifier
    and, through the renders, the encoder and the field.
    """
    logit_shape = classifier(i_patch, j_patch, shape_swap_render)
    logit_appearance = classifier(i_patch, j_patch, appearance_swap_render)
    bce = nn.functional.binary_cross_entropy_with_logits
    return bce(logit_shape, torch.zeros_like(logit_shape)) + bce(
        logit_appearance, torch.ones_like(logit_appearance)
    )


def code_consistency(
    predicted_shape: Tensor,
    predicted_appearance: Tensor,
    expected_shape: Tensor,
    expected_appearance: Tensor,
) -> Tensor:
    """Per-sample ||dz_s||_2 + ||dz_a||_2, averaged over the batch."""
    ds = torch.linalg.norm(predicted_shape - expected_shape, dim=-1)
    da = torch.linalg.norm(predicted_appearance - expected_appearance, dim=-1)
    return (ds + da).mean()


def glac_loss(
    encoder: Encoder,
    rendered_patch: Tensor,
    expected_shape: Tensor,
    expected_appearance: Tensor,
) -> Tensor:
    """Global-local attribute consistency: re-encode a swap render, compare codes.

    The patch runs through the same encoder as full images (GAP makes the
    resolution irrelevant); the camera head output is ignored. Gradients
    flow through both the encoder and the renderer graph of the patch.
    """
    batched = rendered_patch if rendered_patch.ndim == 4 else rendered_patch[None]
    out = encoder(batched)
    return code_consistency(
        out["shape"],
        out["appearance"],
        expected_shape.reshape(out["shape"].shape),
        expected_appearance.reshape(out["appearance"].shape),
    )


def camera_loss(
    predicted_rotation: Tensor,
    predicted_radius: Tensor,
    target_rotation: Tensor,
    target_radius: Tensor,
) -> Tensor:
    """Scale + translation + rotation residual against the identity matrix.

    ``|s_hat - s| + ||t_hat - t||_2 + ||R_hat^T R - I||_F`` with both
    translations derived from their own (rotation, radius) pairs.
    """
    t_pred = camera_translation(predicted_rotation, predicted_radius)
    t_true = camera_translation(target_rotation, target_radius)
    scale_term = (predicted_radius - target_radius).abs()
    trans_term = torch.linalg.norm(t_pred - t_true, dim=-1)
    eye = torch.eye(3, dtype=predicted_rotation.dtype)
    rel = predicted_rotation.transpose(-1, -2) @ target_rotation - eye
    rot_term = torch.linalg.norm(rel.flatten(-2), dim=-1)
    return (scale_term + trans_term + rot_term).mean()


def pseudo_loss(
    predicted_shape: Tensor,
    predicted_appearance: Tensor,
    predicted_rotation: Tensor,
    predicted_radius: Tensor,
    target_shape: Tensor,
    target_appearance: Tensor,
    target_rotation: Tensor,
    target_radius: Tensor,
) -> Tensor:
    """Latent plus camera supervision against stored pseudo-pair ground truth."""
    if predicted_shape.shape != target_shape.shape:
        raise ShapeMismatch("shape code dims differ")
    if predicted_appearance.shape != target_appearance.shape:
        raise ShapeMismatch("appearance code dims differ")
    codes = code_consistency(predicted_shape, predicted_appearance, target_shape, target_appearance)
    return codes + camera_loss(predicted_rotation, predicted_radius, target_rotation, target_radius)
