"""Stage-wise training: adversarial decoder pre-training, pseudo-pair
generation, encoder pre-training against pseudo pairs, and joint
fine-tuning with the disentanglement losses.

One logical controller (the :class:`TrainState`) owns every parameter
group, optimizer and RNG stream. All randomness flows through named
generators stored on the state, so a checkpoint/resume reproduces the
uninterrupted run and two runs with equal seeds produce identical loss
logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import torch
from torch import Tensor
from torch.nn import functional as F

from .config import RunConfig
from .data import SynthDataset
from .encoder import Encoder, EncoderConfig, EncodedAttributes, hide_patch, predicted_pose_tensors
from .field import FieldConfig, LatentCodes, RadianceField
from .geometry import (
    CameraPose,
    PatchSpec,
    patch_pixel_grid,
    rot6d_head_to_matrix,
    sample_camera_poses,
    sample_patch_spec,
)
from .losses import (
    LossWeights,
    PatchDiscriminator,
    RandomFeatureExtractor,
    SwapClassifier,
    discriminator_loss,
    generator_loss,
    glac_loss,
    perceptual_loss,
    pseudo_loss,
    render_loss,
    swac_loss,
)
from .renderer import RenderConfig, render_patches


class NonFiniteLoss(RuntimeError):
    """A loss became NaN/inf; message carries the offending stage and step."""


@dataclass
class PseudoPair:
    """Ground-truth tuple generated by the stage-1 decoder.

    ``seed`` replays the latent/pose draw; re-rendering (codes, pose) with
    the stage-1 checkpoint reproduces ``image`` within 1/255 per pixel.
    """

    shape_code: Tensor
    appearance_code: Tensor
    rotation: Tensor
    radius: float
    image: Tensor
    seed: int

    @property
    def codes(self) -> LatentCodes:
        return LatentCodes(shape=self.shape_code, appearance=self.appearance_code)

    @property
    def pose(self) -> CameraPose:
        return CameraPose(rotation=self.rotation, radius=self.radius)


STREAM_NAMES = ("data", "latent", "pose", "patch", "depth", "hide")


@dataclass
class TrainState:
    """Everything the training controller owns."""

    config: RunConfig
    field_net: RadianceField
    encoder: Encoder
    discriminator: PatchDiscriminator
    swap_classifier: SwapClassifier
    perceptual: RandomFeatureExtractor
    opt_field: torch.optim.Adam
    opt_encoder: torch.optim.Adam
    opt_disc: torch.optim.Adam
    opt_swap: torch.optim.Adam
    generators: dict[str, torch.Generator]
    stage: int = 0
    steps_done: dict[str, int] = dc_field(default_factory=lambda: {"stage1": 0, "stage2": 0, "stage3": 0})
    loss_log: list[dict] = dc_field(default_factory=list)

    @property
    def loss_weights(self) -> LossWeights:
        c = self.config.loss
        return LossWeights(
            render=c.render,
            perceptual=c.perceptual,
            pseudo=c.pseudo,
            gan=c.gan,
            glac=c.glac,
            swac=c.swac,
            r1=c.r1,
        )

    def render_config(self, stochastic: bool) -> RenderConfig:
        r = self.config.render
        return RenderConfig(
            samples_per_ray=r.samples_per_ray,
            near=r.near,
            far=r.far,
            background=r.background,
            stochastic_depths=stochastic,
        )


def new_train_state(config: RunConfig) -> TrainState:
    """Build all networks, optimizers and RNG streams from a validated config."""
    config.validate()
    m = config.model
    field_cfg = FieldConfig(
        shape_dim=m.shape_dim,
        appearance_dim=m.appearance_dim,
        pos_frequencies=m.pos_frequencies,
        dir_frequencies=m.dir_frequencies,
        trunk_layers=m.trunk_layers,
        trunk_width=m.trunk_width,
    )
    enc_cfg = EncoderConfig(
        shape_dim=m.shape_dim,
        appearance_dim=m.appearance_dim,
        channels=m.encoder_channels,
        fc_width=m.encoder_fc_width,
        radius_floor=m.radius_floor,
    )
    seed = config.seed

    def gen(offset: int) -> torch.Generator:
        return torch.Generator().manual_seed(seed * 1_000_003 + offset)

    field_net = RadianceField(field_cfg, generator=gen(1))
    encoder = Encoder(enc_cfg, generator=gen(2))
    discriminator = PatchDiscriminator(generator=gen(3))
    swap_classifier = SwapClassifier(generator=gen(4))
    perceptual = RandomFeatureExtractor(seed=1234)
    betas = config.training.adam_betas
    state = TrainState(
        config=config,
        field_net=field_net,
        encoder=encoder,
        discriminator=discriminator,
        swap_classifier=swap_classifier,
        perceptual=perceptual,
        opt_field=torch.optim.Adam(field_net.parameters(), lr=config.training.decoder_lr, betas=betas),
        opt_encoder=torch.optim.Adam(encoder.parameters(), lr=config.training.encoder_lr, betas=betas),
        opt_disc=torch.optim.Adam(discriminator.parameters(), lr=config.training.decoder_lr, betas=betas),
        opt_swap=torch.optim.Adam(swap_classifier.parameters(), lr=config.training.decoder_lr, betas=betas),
        generators={name: gen(10 + i) for i, name in enumerate(STREAM_NAMES)},
    )
    return state


# ---------------------------------------------------------------------------
# sampling helpers


def extract_patches(images: Tensor, centers: Tensor, scales: Tensor, size: int) -> Tensor:
    """Bilinearly sample K x K patches at virtual pixel centers.

    The virtual grid coincides with image pixel centers whenever the patch
    is axis-aligned at matching scale, so full-image "patches" reproduce
    the image exactly.
    """
    grid = patch_pixel_grid(centers, scales, size) * 2.0 - 1.0
    out = F.grid_sample(
        images.permute(0, 3, 1, 2),
        grid,
        mode="bilinear",
        align_corners=False,
        padding_mode="border",
    )
    return out.permute(0, 2, 3, 1)


def _sample_specs(state: TrainState, n: int) -> tuple[Tensor, Tensor]:
    size = state.config.patch.size
    scale_range = state.config.patch.scale_range
    specs = [sample_patch_spec(state.generators["patch"], size, scale_range) for _ in range(n)]
    centers = torch.tensor([s.center for s in specs], dtype=torch.float32)
    scales = torch.tensor([s.scale for s in specs], dtype=torch.float32)
    return centers, scales


def _sample_latents(state: TrainState, n: int) -> tuple[Tensor, Tensor]:
    m = state.config.model
    zs = torch.randn(n, m.shape_dim, generator=state.generators["latent"])
    za = torch.randn(n, m.appearance_dim, generator=state.generators["latent"])
    return zs, za


def _check_finite(state: TrainState, record: dict) -> None:
    for key, value in record.items():
        if isinstance(value, float) and not math.isfinite(value):
            raise NonFiniteLoss(
                f"non-finite loss {key}={value} at stage {record.get('stage')} "
                f"step {record.get('step')} (config seed {state.config.seed})"
            )


def _log(state: TrainState, record: dict) -> None:
    _check_finite(state, record)
    state.loss_log.append(record)


# ---------------------------------------------------------------------------
# stage 1: adversarial decoder pre-training


def run_stage1(state: TrainState, dataset: SynthDataset, steps: int | None = None) -> TrainState:
    """Alternating discriminator/generator updates on random-code renders.

    Per step: draw codes from N(0, I) and a camera on the upper
    hemisphere, render a virtual patch, crop real patches at independent
    specs, update the discriminator (non-saturating + R1 on real data)
    and then the generator (the radiance field).
    """
    cfg = state.config
    steps = cfg.training.stage1_steps if steps is None else steps
    render_cfg = state.render_config(stochastic=True)
    n_data = len(dataset)
    fake_b = cfg.training.stage1_fake_batch
    real_b = cfg.training.stage1_real_batch
    state.field_net.train()
    state.discriminator.train()
    for local_step in range(steps):
        step = state.steps_done["stage1"] + 1

        idx = torch.randint(n_data, (real_b,), generator=state.generators["data"])
        centers_r, scales_r = _sample_specs(state, real_b)
        real = extract_patches(dataset.images[idx], centers_r, scales_r, cfg.patch.size)

        zs, za = _sample_latents(state, fake_b)
        rot, rad = sample_camera_poses(
            state.generators["pose"],
            fake_b,
            cfg.camera.radius_range,
            cfg.camera.elevation_range_deg,
        )
        centers_f, scales_f = _sample_specs(state, fake_b)
        fake = render_patches(
            state.field_net,
            zs,
            za,
            rot,
            rad,
            centers_f,
            scales_f,
            cfg.patch.size,
            cfg.camera.focal,
            render_cfg,
            rng=state.generators["depth"],
        )

        d_loss, parts = discriminator_loss(state.discriminator, real, fake.detach(), cfg.loss.r1)
        state.opt_disc.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_disc.step()

        g_loss = generator_loss(state.discriminator, fake)
        state.opt_field.zero_grad(set_to_none=True)
        g_loss.backward()
        state.opt_field.step()

        state.steps_done["stage1"] = step
        record = {
            "stage": 1,
            "step": step,
            "d_loss": float(d_loss),
            "d_adversarial": parts["adversarial"],
            "d_r1": parts["r1"],
            "g_loss": float(g_loss),
        }
        _log(state, record)
    state.stage = max(state.stage, 1)
    return state


def generate_pseudo_set(state: TrainState, count: int, seed: int | None = None) -> list[PseudoPair]:
    """Render ``count`` pseudo pairs with the frozen stage-1 decoder.

    Each pair records its own derived seed so the code/pose draw replays
    independently of the others. Images render deterministically (midpoint
    depths) at the training resolution.
    """
    cfg = state.config
    m = cfg.model
    render_cfg = state.render_config(stochastic=False)
    base = torch.Generator().manual_seed(cfg.seed * 7_777_777 + 13 if seed is None else seed)
    pair_seeds = torch.randint(2**31 - 1, (count,), generator=base).tolist()
    pairs: list[PseudoPair] = []
    state.field_net.eval()
    res = cfg.data.resolution
    full_center = torch.full((1, 2), 0.5)
    full_scale = torch.ones(1)
    with torch.no_grad():
        for pair_seed in pair_seeds:
            g = torch.Generator().manual_seed(int(pair_seed))
            zs = torch.randn(m.shape_dim, generator=g)
            za = torch.randn(m.appearance_dim, generator=g)
            rot, rad = sample_camera_poses(
                g, 1, cfg.camera.radius_range, cfg.camera.elevation_range_deg
            )
            image = render_patches(
                state.field_net,
                zs[None],
                za[None],
                rot,
                rad,
                full_center,
                full_scale,
                res,
                cfg.camera.focal,
                render_cfg,
            )[0]
            pairs.append(
                PseudoPair(
                    shape_code=zs,
                    appearance_code=za,
                    rotation=rot[0],
                    radius=float(rad[0]),
                    image=image,
                    seed=int(pair_seed),
                )
            )
    return pairs


def save_pseudo_set(pairs: list[PseudoPair], directory) -> None:
    """Persist pseudo pairs: images/NNNNNN.png + pairs.jsonl + manifest.json."""
    import json
    from pathlib import Path

    from PIL import Image

    from .data import to_uint8
    from .geometry import matrix_to_rot6d

    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / "pairs.jsonl", "w") as fh:
        for i, pair in enumerate(pairs):
            Image.fromarray(to_uint8(pair.image)).save(root / "images" / f"{i:06d}.png")
            fh.write(
                json.dumps(
                    {
                        "index": i,
                        "shape_code": [float(x) for x in pair.shape_code],
                        "appearance_code": [float(x) for x in pair.appearance_code],
                        "rotation_6d": [float(x) for x in matrix_to_rot6d(pair.rotation)],
                        "radius": pair.radius,
                        "seed": pair.seed,
                    }
                )
                + "\n"
            )
    (root / "manifest.json").write_text(json.dumps({"count": len(pairs)}))


def load_pseudo_set(directory) -> list[PseudoPair]:
    import json
    from pathlib import Path

    import numpy as np
    from PIL import Image

    from .data import from_uint8
    from .geometry import rot6d_to_matrix

    root = Path(directory)
    pairs = []
    with open(root / "pairs.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            image = from_uint8(
                np.asarray(Image.open(root / "images" / f"{rec['index']:06d}.png").convert("RGB"))
            )
            pairs.append(
                PseudoPair(
                    shape_code=torch.tensor(rec["shape_code"], dtype=torch.float32),
                    appearance_code=torch.tensor(rec["appearance_code"], dtype=torch.float32),
                    rotation=rot6d_to_matrix(torch.tensor(rec["rotation_6d"], dtype=torch.float32)),
                    radius=float(rec["radius"]),
                    image=image,
                    seed=int(rec["seed"]),
                )
            )
    return pairs


# ---------------------------------------------------------------------------
# stage 2: encoder pre-training on pseudo pairs


def _maybe_hide(
    state: TrainState, images: Tensor, fill: Tensor
) -> tuple[Tensor, list[PatchSpec | None]]:
    """Apply patch hiding per sample with the configured probability."""
    cfg = state.config
    out = images.clone()
    specs: list[PatchSpec | None] = []
    coins = torch.rand(images.shape[0], generator=state.generators["hide"])
    for i in range(images.shape[0]):
        if float(coins[i]) < cfg.training.hide_probability:
            spec = sample_patch_spec(state.generators["patch"], cfg.patch.size, cfg.patch.scale_range)
            hidden, _ = hide_patch(images[i], spec, fill)
            out[i] = hidden
            specs.append(spec)
        else:
            specs.append(None)
    return out, specs


def _render_specs(state: TrainState, hide_specs: list[PatchSpec | None], n: int) -> tuple[Tensor, Tensor]:
    """Render at the hidden patch when one exists, else at a fresh random spec."""
    cfg = state.config
    centers, scales = [], []
    for i in range(n):
        spec = hide_specs[i]
        if spec is None:
            spec = sample_patch_spec(state.generators["patch"], cfg.patch.size, cfg.patch.scale_range)
        centers.append(spec.center)
        scales.append(spec.scale)
    return torch.tensor(centers, dtype=torch.float32), torch.tensor(scales, dtype=torch.float32)


def run_stage2(state: TrainState, pseudo_set: list[PseudoPair], steps: int | None = None) -> TrainState:
    """Train the encoder against pseudo pairs with the decoder bit-frozen.

    Per step a code batch gets direct latent/camera supervision; a render
    sub-batch additionally drives pixel and perceptual reconstruction
    through the frozen decoder (gradients reach the encoder through the
    predicted codes and camera).
    """
    if not pseudo_set:
        raise ValueError("stage 2 requires a non-empty pseudo set")
    cfg = state.config
    steps = cfg.training.stage2_steps if steps is None else steps
    weights = state.loss_weights
    render_cfg = state.render_config(stochastic=True)
    code_b = min(cfg.training.stage2_code_batch, len(pseudo_set))
    render_b = min(cfg.training.stage2_render_batch, code_b)
    images = torch.stack([p.image for p in pseudo_set])
    shape_codes = torch.stack([p.shape_code for p in pseudo_set])
    appearance_codes = torch.stack([p.appearance_code for p in pseudo_set])
    rotations = torch.stack([p.rotation for p in pseudo_set])
    radii = torch.tensor([p.radius for p in pseudo_set], dtype=torch.float32)
    fill = images.mean(dim=(0, 1, 2))

    state.encoder.train()
    state.field_net.eval()
    state.field_net.requires_grad_(False)  # frozen decoder; encoder grads still flow through it
    try:
        for _ in range(steps):
            step = state.steps_done["stage2"] + 1
            idx = torch.randint(len(pseudo_set), (code_b,), generator=state.generators["data"])
            batch = images[idx]
            hidden, hide_specs = _maybe_hide(state, batch, fill)
            out = state.encoder(hidden)
            rot_pred = rot6d_head_to_matrix(out["rot6d"])
            loss_pseudo = pseudo_loss(
                out["shape"],
                out["appearance"],
                rot_pred,
                out["radius"],
                shape_codes[idx],
                appearance_codes[idx],
                rotations[idx],
                radii[idx],
            )

            centers, scales = _render_specs(state, hide_specs, render_b)
            rendered = render_patches(
                state.field_net,
                out["shape"][:render_b],
                out["appearance"][:render_b],
                rot_pred[:render_b],
                out["radius"][:render_b],
                centers,
                scales,
                cfg.patch.size,
                cfg.camera.focal,
                render_cfg,
                rng=state.generators["depth"],
            )
            targets = extract_patches(batch[:render_b], centers, scales, cfg.patch.size)
            loss_render = render_loss(targets, rendered)
            loss_percep = perceptual_loss(state.perceptual, targets, rendered)

            total = (
                weights.pseudo * loss_pseudo
                + weights.render * loss_render
                + weights.perceptual * loss_percep
            )
            state.opt_encoder.zero_grad(set_to_none=True)
            total.backward()
            state.opt_encoder.step()

            state.steps_done["stage2"] = step
            _log(
                state,
                {
                    "stage": 2,
                    "step": step,
                    "loss": float(total),
                    "pseudo": float(loss_pseudo),
                    "render": float(loss_render),
                    "perceptual": float(loss_percep),
                },
            )
    finally:
        state.field_net.requires_grad_(True)
    state.stage = max(state.stage, 2)
    return state


# ---------------------------------------------------------------------------
# attribute swapping


def swap_codes(a: EncodedAttributes, b: EncodedAttributes, kind: str) -> EncodedAttributes:
    """Swap one attribute from ``b`` into ``a``.

    Shape swap returns (z_s from b, z_a from a); appearance swap (z_s from
    a, z_a from b). The pose follows the image contributing the shape
    code, since shape and pose jointly determine rendered geometry.
    """
    if a.codes.shape.shape != b.codes.shape.shape or a.codes.appearance.shape != b.codes.appearance.shape:
        raise ValueError("latent code dimensions differ between the two inputs")
    if kind == "shape":
        return EncodedAttributes(
            codes=LatentCodes(shape=b.codes.shape, appearance=a.codes.appearance),
            pose=b.pose,
        )
    if kind == "appearance":
        return EncodedAttributes(
            codes=LatentCodes(shape=a.codes.shape, appearance=b.codes.appearance),
            pose=a.pose,
        )
    raise ValueError(f"unknown swap kind {kind!r}")


# ---------------------------------------------------------------------------
# stage 3: joint fine-tuning with disentanglement losses


def run_stage3(state: TrainState, dataset: SynthDataset, steps: int | None = None) -> TrainState:
    """Fine-tune encoder, decoder, discriminator and swap classifier jointly.

    Per step, for each (I, J) pair: reconstruct a patch of I from its
    predicted attributes, render both swap combinations, apply the
    adversarial loss to all three renders, the reconstruction losses to
    the I patch, the consistency loss to the swap renders, and the
    swapped-attribute classification loss to the triples.
    """
    cfg = state.config
    steps = cfg.training.stage3_steps if steps is None else steps
    weights = state.loss_weights
    render_cfg = state.render_config(stochastic=True)
    n_data = len(dataset)
    if n_data < 2:
        raise ValueError("stage 3 pairs each sample with another; need >= 2 images")
    pair_b = cfg.training.stage3_pair_batch
    real_b = max(4, pair_b)
    fill = dataset.images.mean(dim=(0, 1, 2))
    size = cfg.patch.size
    state.encoder.train()
    state.field_net.train()
    state.discriminator.train()
    state.swap_classifier.train()
    for _ in range(steps):
        step = state.steps_done["stage3"] + 1
        idx_i = torch.randint(n_data, (pair_b,), generator=state.generators["data"])
        offset = 1 + torch.randint(n_data - 1, (pair_b,), generator=state.generators["data"])
        idx_j = (idx_i + offset) % n_data  # a random *other* element

        stacked = torch.cat([dataset.images[idx_i], dataset.images[idx_j]], dim=0)
        hidden, hide_specs = _maybe_hide(state, stacked, fill)
        out = state.encoder(hidden)
        rot_pred = rot6d_head_to_matrix(out["rot6d"])
        zs_i, zs_j = out["shape"][:pair_b], out["shape"][pair_b:]
        za_i, za_j = out["appearance"][:pair_b], out["appearance"][pair_b:]
        rot_i, rot_j = rot_pred[:pair_b], rot_pred[pair_b:]
        rad_i, rad_j = out["radius"][:pair_b], out["radius"][pair_b:]

        # One batched render: reconstruction of I, shape swap, appearance swap.
        recon_centers, recon_scales = _render_specs(state, hide_specs[:pair_b], pair_b)
        swap_centers, swap_scales = _sample_specs(state, 2 * pair_b)
        all_shape = torch.cat([zs_i, zs_j, zs_i], dim=0)
        all_appearance = torch.cat([za_i, za_i, za_j], dim=0)
        all_rot = torch.cat([rot_i, rot_j, rot_i], dim=0)
        all_rad = torch.cat([rad_i, rad_j, rad_i], dim=0)
        all_centers = torch.cat([recon_centers, swap_centers], dim=0)
        all_scales = torch.cat([recon_scales, swap_scales], dim=0)
        renders = render_patches(
            state.field_net,
            all_shape,
            all_appearance,
            all_rot,
            all_rad,
            all_centers,
            all_scales,
            size,
            cfg.camera.focal,
            render_cfg,
            rng=state.generators["depth"],
        )
        recon = renders[:pair_b]
        shape_swap_render = renders[pair_b : 2 * pair_b]
        appearance_swap_render = renders[2 * pair_b :]

        # Discriminator update on real crops vs all generated patches.
        idx_r = torch.randint(n_data, (real_b,), generator=state.generators["data"])
        centers_r, scales_r = _sample_specs(state, real_b)
        real = extract_patches(dataset.images[idx_r], centers_r, scales_r, size)
        d_loss, d_parts = discriminator_loss(
            state.discriminator, real, renders.detach(), cfg.loss.r1
        )
        state.opt_disc.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_disc.step()

        # Joint generator/encoder/classifier update.
        recon_targets = extract_patches(dataset.images[idx_i], recon_centers, recon_scales, size)
        loss_render = render_loss(recon_targets, recon)
        loss_percep = perceptual_loss(state.perceptual, recon_targets, recon)
        loss_gan = generator_loss(state.discriminator, renders)
        loss_glac = glac_loss(
            state.encoder, shape_swap_render, zs_j, za_i
        ) + glac_loss(state.encoder, appearance_swap_render, zs_i, za_j)
        swac_centers, swac_scales = _sample_specs(state, 2 * pair_b)
        i_patch = extract_patches(
            dataset.images[idx_i], swac_centers[:pair_b], swac_scales[:pair_b], size
        )
        j_patch = extract_patches(
            dataset.images[idx_j], swac_centers[pair_b:], swac_scales[pair_b:], size
        )
        loss_swac = swac_loss(
            state.swap_classifier, i_patch, j_patch, shape_swap_render, appearance_swap_render
        )
        total = (
            weights.gan * loss_gan
            + weights.render * loss_render
            + weights.perceptual * loss_percep
            + weights.glac * loss_glac
            + weights.swac * loss_swac
        )
        state.opt_field.zero_grad(set_to_none=True)
        state.opt_encoder.zero_grad(set_to_none=True)
        state.opt_swap.zero_grad(set_to_none=True)
        total.backward()
        state.opt_field.step()
        state.opt_encoder.step()
        state.opt_swap.step()

        state.steps_done["stage3"] = step
        _log(
            state,
            {
                "stage": 3,
                "step": step,
                "loss": float(total),
                "gan": float(loss_gan),
                "render": float(loss_render),
                "perceptual": float(loss_percep),
                "glac": float(loss_glac),
                "swac": float(loss_swac),
                "d_loss": float(d_loss),
                "d_r1": d_parts["r1"],
            },
        )
    state.stage = max(state.stage, 3)
    return state
