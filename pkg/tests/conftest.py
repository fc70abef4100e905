import pytest
import torch

from aenerf.config import RunConfig, config_from_dict
from aenerf.data import SynthDataset, build_synth_dataset

TINY = {
    "seed": 3,
    "model": {
        "shape_dim": 8,
        "appearance_dim": 8,
        "trunk_layers": 2,
        "trunk_width": 32,
        "encoder_channels": [8, 16, 16],
        "encoder_fc_width": 32,
    },
    "render": {"samples_per_ray": 6, "near": 1.5, "far": 4.5},
    "patch": {"size": 16, "scale_range": [0.4, 0.9]},
    "data": {"resolution": 32, "train_size": 8},
    "training": {
        "stage1_steps": 4,
        "stage2_steps": 4,
        "stage3_steps": 3,
        "pseudo_count": 6,
        "pseudo_holdout": 2,
        "stage1_fake_batch": 2,
        "stage1_real_batch": 4,
        "stage2_code_batch": 4,
        "stage2_render_batch": 2,
        "stage3_pair_batch": 1,
        "log_every": 1,
    },
}


def tiny_config(seed: int = 3) -> RunConfig:
    mapping = dict(TINY)
    mapping["seed"] = seed
    return config_from_dict(mapping)


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_dataset(tiny_cfg) -> SynthDataset:
    return build_synth_dataset(
        tiny_cfg.data.train_size, tiny_cfg.data.resolution, tiny_cfg.seed
    )
