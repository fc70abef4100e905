import math

import pytest
import torch

from aenerf.data import (
    EmptyFolder,
    OracleLighting,
    SceneFactors,
    build_swap_test_set,
    build_synth_dataset,
    ingest_image_folder,
    load_dataset,
    oracle_render,
    save_dataset,
    to_uint8,
)
from aenerf.eval import foreground_mask
from aenerf.geometry import pose_from_angles

FRONTAL = pose_from_angles(0.0, 30.0, 3.0)


def factors(half_extents=(0.7, 0.7, 0.7), albedo=(0.5, 0.5, 0.5), pose=FRONTAL) -> SceneFactors:
    return SceneFactors(half_extents=half_extents, albedo=albedo, pose=pose)


class TestOracleRender:
    def test_red_albedo_channel_order(self):
        img = oracle_render(factors(albedo=(1.0, 0.0, 0.0)), 48, focal=1.2)
        mask = foreground_mask(img)
        assert bool(mask.any())
        fg = img[mask]
        assert bool((fg[:, 0] >= fg[:, 1]).all()) and bool((fg[:, 0] >= fg[:, 2]).all())

    def test_bigger_solid_bigger_silhouette(self):
        small = oracle_render(factors(half_extents=(0.4, 0.4, 0.4)), 48, focal=1.2)
        big = oracle_render(factors(half_extents=(0.8, 0.8, 0.8)), 48, focal=1.2)
        assert int(foreground_mask(big).sum()) > int(foreground_mask(small).sum())

    def test_bitwise_deterministic(self):
        a = oracle_render(factors(), 32, focal=1.2)
        b = oracle_render(factors(), 32, focal=1.2)
        assert torch.equal(a, b)

    def test_albedo_change_keeps_silhouette(self):
        a = oracle_render(factors(albedo=(0.9, 0.2, 0.1)), 48, focal=1.2)
        b = oracle_render(factors(albedo=(0.1, 0.4, 0.8)), 48, focal=1.2)
        assert torch.equal(foreground_mask(a), foreground_mask(b))

    def test_shape_change_keeps_mean_foreground_color(self):
        a = oracle_render(factors(half_extents=(0.4, 0.9, 0.5)), 48, focal=1.2)
        b = oracle_render(factors(half_extents=(0.9, 0.4, 0.8)), 48, focal=1.2)
        mean_a = a[foreground_mask(a)].mean(dim=0)
        mean_b = b[foreground_mask(b)].mean(dim=0)
        assert float((mean_a - mean_b).abs().max()) < 2.0 / 255.0

    def test_lambertian_variant_shades(self):
        lit = OracleLighting(ambient=0.3)
        img = oracle_render(factors(albedo=(1.0, 1.0, 1.0)), 48, focal=1.2, lighting=lit)
        fg = img[foreground_mask(img)]
        assert float(fg.min()) < 0.95  # some shading
        assert float(fg.std(dim=0).max()) > 0.01  # not flat


class TestSynthDataset:
    def test_single_entry_replays(self):
        ds = build_synth_dataset(1, 32, seed=5)
        replay = oracle_render(ds.factors[0], 32, ds.focal)
        assert torch.equal(ds.images[0], replay)

    def test_factor_marginals_uniform(self):
        from scipy.stats import chisquare

        ds = build_synth_dataset(10_000, 16, seed=11)
        half = torch.tensor([f.half_extents[0] for f in ds.factors])
        albedo = torch.tensor([f.albedo[1] for f in ds.factors])
        for values, lo, hi in ((half, 0.3, 1.0), (albedo, 0.1, 1.0)):
            bins = ((values - lo) / (hi - lo) * 10).clamp(0, 9.999).long()
            counts = torch.bincount(bins, minlength=10).float()
            _, p = chisquare(counts.numpy())
            assert p > 0.01

    def test_save_load_round_trip(self, tmp_path):
        ds = build_synth_dataset(3, 24, seed=3)
        save_dataset(ds, tmp_path)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == 3
        # images round-trip through 8-bit quantization
        quantized = torch.from_numpy(to_uint8(ds.images[0])).float() / 255.0
        assert torch.allclose(loaded.images[0], quantized, atol=1e-7)
        assert loaded.factors[1].albedo == pytest.approx(ds.factors[1].albedo)
        assert torch.allclose(
            loaded.factors[2].pose.rotation, ds.factors[2].pose.rotation, atol=1e-6
        )


class TestSwapTestSet:
    def test_layout_and_replay(self):
        triples = build_swap_test_set(2, 24, seed=9)
        assert len(triples) == 6
        attrs = [t.swapped_attribute for t in triples]
        assert attrs == ["shape", "shape", "appearance", "appearance", "camera", "camera"]
        for t in triples:
            swapped = t.factors_a.replace(t.swapped_attribute, t.factors_b)
            assert torch.equal(t.ground_truth_swapped, oracle_render(swapped, 24, 1.2))

    def test_self_swap_is_identity(self):
        f = factors()
        swapped = f.replace("shape", f)
        assert torch.equal(oracle_render(f, 24, 1.2), oracle_render(swapped, 24, 1.2))

    def test_camera_swap_factors(self):
        triples = build_swap_test_set(1, 16, seed=2)
        cam = [t for t in triples if t.swapped_attribute == "camera"][0]
        merged = cam.factors_a.replace("camera", cam.factors_b)
        assert merged.half_extents == cam.factors_a.half_extents
        assert merged.albedo == cam.factors_a.albedo
        assert torch.equal(merged.pose.rotation, cam.factors_b.pose.rotation)


class TestIngestion:
    def test_lexicographic_order_and_count(self, tmp_path):
        from PIL import Image
        import numpy as np

        for name, value in (("b.png", 100), ("a.png", 20), ("c.png", 200)):
            Image.fromarray(np.full((20, 20, 3), value, dtype=np.uint8)).save(tmp_path / name)
        images = ingest_image_folder(tmp_path, 16)
        assert images.shape == (3, 16, 16, 3)
        assert float(images[0].mean()) < float(images[1].mean()) < float(images[2].mean())

    def test_center_crop_non_square(self, tmp_path):
        from PIL import Image
        import numpy as np

        array = np.zeros((50, 100, 3), dtype=np.uint8)
        array[:, 25:75] = 255  # center square white
        Image.fromarray(array).save(tmp_path / "wide.png")
        images = ingest_image_folder(tmp_path, 32)
        assert float(images[0].min()) > 0.9  # crop kept only the white center

    def test_unreadable_skipped_empty_aborts(self, tmp_path):
        (tmp_path / "broken.png").write_bytes(b"not a png")
        with pytest.raises(EmptyFolder):
            ingest_image_folder(tmp_path, 16)

    def test_deterministic(self, tmp_path):
        from PIL import Image
        import numpy as np

        rng = np.random.default_rng(0)
        Image.fromarray(rng.integers(0, 255, (33, 47, 3), dtype=np.uint8).astype(np.uint8)).save(
            tmp_path / "x.png"
        )
        a = ingest_image_folder(tmp_path, 16)
        b = ingest_image_folder(tmp_path, 16)
        assert torch.equal(a, b)
