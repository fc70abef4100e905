"""Run configuration: every tunable, two presets, YAML round-trip.

Configs load from human-editable YAML. Unknown keys are rejected and all
values are range-checked at load time; CLI flag overrides are applied on
top of file values and logged by the caller.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    shape_dim: int = 32
    appearance_dim: int = 32
    pos_frequencies: int = 10
    dir_frequencies: int = 4
    trunk_layers: int = 4
    trunk_width: int = 128
    encoder_channels: tuple[int, ...] = (32, 64, 96, 128, 128, 128)
    encoder_fc_width: int = 256
    radius_floor: float = 0.5

    def validate(self) -> None:
        if self.shape_dim < 1 or self.appearance_dim < 1:
            raise ConfigError("code dimensions must be positive")
        if self.pos_frequencies < 1 or self.dir_frequencies < 1:
            raise ConfigError("encoding frequency counts must be >= 1")
        if self.trunk_layers < 1 or self.trunk_width < 8:
            raise ConfigError("trunk must have >= 1 layers of width >= 8")
        if len(self.encoder_channels) < 1:
            raise ConfigError("encoder needs at least one conv layer")


@dataclass(frozen=True)
class CameraSection:
    focal: float = 1.2
    radius_range: tuple[float, float] = (2.8, 3.2)
    elevation_range_deg: tuple[float, float] = (10.0, 60.0)

    def validate(self) -> None:
        if self.focal <= 0:
            raise ConfigError("focal must be positive")
        if not 0 < self.radius_range[0] <= self.radius_range[1]:
            raise ConfigError("radius range must be positive and ordered")
        lo, hi = self.elevation_range_deg
        if not (0.0 <= lo <= hi <= 90.0):
            raise ConfigError("elevation range must lie in [0, 90] degrees")


@dataclass(frozen=True)
class RenderSection:
    samples_per_ray: int = 32
    near: float = 1.3
    far: float = 4.7
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self) -> None:
        if self.samples_per_ray < 2:
            raise ConfigError("samples_per_ray must be >= 2")
        if not self.near < self.far:
            raise ConfigError("near must be < far")
        if any(not 0.0 <= c <= 1.0 for c in self.background):
            raise ConfigError("background must lie in [0, 1]^3")


@dataclass(frozen=True)
class PatchSection:
    size: int = 32  # K; the default grid has exactly 1,024 rays
    scale_range: tuple[float, float] = (0.35, 0.8)

    def validate(self) -> None:
        if self.size < 2:
            raise ConfigError("patch size must be >= 2")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError("patch scale range must lie in (0, 1]")


@dataclass(frozen=True)
class DataSection:
    resolution: int = 64
    train_size: int = 2000
    image_dir: str = ""  # when set, train on an ingested folder instead

    def validate(self) -> None:
        if self.resolution < 16:
            raise ConfigError("resolution must be >= 16")
        if self.train_size < 1:
            raise ConfigError("train_size must be >= 1")


@dataclass(frozen=True)
class LossSection:
    render: float = 1.0
    perceptual: float = 0.1
    pseudo: float = 1.0
    gan: float = 0.5
    glac: float = 0.1
    swac: float = 0.1
    r1: float = 10.0

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0.0:
                raise ConfigError(f"loss weight {f.name} must be >= 0")


@dataclass(frozen=True)
class TrainingSection:
    stage1_steps: int = 2000
    stage2_steps: int = 3000
    stage3_steps: int = 600
    pseudo_count: int = 512
    pseudo_holdout: int = 128
    decoder_lr: float = 5e-4
    encoder_lr: float = 1e-4
    adam_betas: tuple[float, float] = (0.0, 0.99)
    stage1_fake_batch: int = 2
    stage1_real_batch: int = 8
    stage2_code_batch: int = 12
    stage2_render_batch: int = 1
    stage3_pair_batch: int = 1
    hide_probability: float = 0.5
    log_every: int = 10

    def validate(self) -> None:
        for name in ("stage1_steps", "stage2_steps", "stage3_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pseudo_count < 1:
            raise ConfigError("pseudo_count must be >= 1")
        if not (0.0 <= self.hide_probability <= 1.0):
            raise ConfigError("hide_probability must lie in [0, 1]")
        if self.decoder_lr <= 0 or self.encoder_lr <= 0:
            raise ConfigError("learning rates must be positive")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 7
    model: ModelSection = field(default_factory=ModelSection)
    camera: CameraSection = field(default_factory=CameraSection)
    render: RenderSection = field(default_factory=RenderSection)
    patch: PatchSection = field(default_factory=PatchSection)
    data: DataSection = field(default_factory=DataSection)
    loss: LossSection = field(default_factory=LossSection)
    training: TrainingSection = field(default_factory=TrainingSection)

    def validate(self) -> "RunConfig":
        if self.preset not in ("desk", "production"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        for section in (self.model, self.camera, self.render, self.patch, self.data, self.loss, self.training):
            section.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        def unwrap(value):
            if dataclasses.is_dataclass(value):
                return {f.name: unwrap(getattr(value, f.name)) for f in dataclasses.fields(value)}
            if isinstance(value, tuple):
                return list(value)
            return value

        return unwrap(self)


def production_config(seed: int = 7) -> RunConfig:
    """Full-scale preset: paper-sized model, 256 px data, long schedules."""
    return RunConfig(
        preset="production",
        seed=seed,
        model=ModelSection(
            shape_dim=128,
            appearance_dim=128,
            trunk_layers=8,
            trunk_width=256,
            encoder_channels=(64, 128, 256, 256, 512, 512),
        ),
        data=DataSection(resolution=256, train_size=10000),
        training=TrainingSection(
            stage1_steps=100_000,
            stage2_steps=50_000,
            stage3_steps=50_000,
            pseudo_count=15_000,
            pseudo_holdout=1_000,
            stage1_fake_batch=8,
            stage1_real_batch=8,
            stage2_code_batch=16,
            stage2_render_batch=8,
            stage3_pair_batch=4,
        ),
    )


def desk_config(seed: int = 7) -> RunConfig:
    """Desk preset: 64 px images, K=32, N=32, code dim 32."""
    return RunConfig(preset="desk", seed=seed)


_PRESETS = {"desk": desk_config, "production": production_config}


_SECTIONS = {
    "model": ModelSection,
    "camera": CameraSection,
    "render": RenderSection,
    "patch": PatchSection,
    "data": DataSection,
    "loss": LossSection,
    "training": TrainingSection,
}


def _from_mapping(cls, mapping: dict[str, Any], path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {path}{key}")
        if cls is RunConfig and key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path}{key} must be a mapping")
            kwargs[key] = _from_mapping(_SECTIONS[key], value, f"{path}{key}.")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(mapping: dict[str, Any]) -> RunConfig:
    """Build a validated config from a mapping, starting from its preset."""
    mapping = dict(mapping or {})
    preset = mapping.get("preset", "desk")
    if preset not in _PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    base = _PRESETS[preset]().to_dict()
    merged = _merge(base, mapping)
    return _from_mapping(RunConfig, merged, "").validate()


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return config_from_dict(raw)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> tuple[RunConfig, list[str]]:
    """Apply dotted-key overrides (e.g. ``training.stage1_steps``) and log them.

    Returns the new config plus one human-readable line per changed key.
    """
    mapping = config.to_dict()
    log = []
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = mapping
        for part in parts[:-1]:
            if part not in node:
                raise ConfigError(f"unknown config key {dotted}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted}")
        old = node[parts[-1]]
        node[parts[-1]] = value
        log.append(f"override {dotted}: {old!r} -> {value!r}")
    return config_from_dict(mapping), log
