import pytest
import torch

from aenerf.encoder import (
    BadResolution,
    Encoder,
    EncoderConfig,
    OutOfBounds,
    encode,
    encode_patch,
    hide_patch,
)
from aenerf.geometry import PatchSpec

CFG = EncoderConfig(shape_dim=16, appearance_dim=16, channels=(16, 32, 32, 64, 64, 64), fc_width=64)


@pytest.fixture(scope="module")
def enc() -> Encoder:
    model = Encoder(CFG, generator=torch.Generator().manual_seed(0))
    model.eval()
    return model


def random_image(seed: int, side: int = 64) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(side, side, 3, generator=gen)


class TestEncode:
    def test_output_dims(self, enc):
        attrs = encode(enc, random_image(0))
        assert attrs.codes.shape.shape == (16,)
        assert attrs.codes.appearance.shape == (16,)
        assert attrs.pose.rotation.shape == (3, 3)
        assert attrs.pose.radius > 0

    def test_deterministic(self, enc):
        a = encode(enc, random_image(1))
        b = encode(enc, random_image(1))
        assert torch.equal(a.codes.shape, b.codes.shape)
        assert torch.equal(a.pose.rotation, b.pose.rotation)

    def test_batch_composition_invariance(self, enc):
        images = torch.stack([random_image(i) for i in range(4)])
        with torch.no_grad():
            batched = enc(images)
            single = enc(images[2:3])
        assert torch.allclose(batched["shape"][2], single["shape"][0], atol=1e-6)
        assert torch.allclose(batched["rot6d"][2], single["rot6d"][0], atol=1e-6)

    def test_pose_head_always_valid_rotation(self, enc):
        gen = torch.Generator().manual_seed(42)
        images = torch.rand(1000, 32, 32, 3, generator=gen)
        with torch.no_grad():
            out = enc(images)
        from aenerf.geometry import rot6d_head_to_matrix

        r = rot6d_head_to_matrix(out["rot6d"])
        eye = torch.eye(3).expand_as(r)
        assert torch.allclose(r.transpose(-1, -2) @ r, eye, atol=1e-5)
        assert bool((torch.linalg.det(r) > 0).all())
        assert bool((out["radius"] >= CFG.radius_floor).all())

    def test_bad_resolution(self, enc):
        with pytest.raises(BadResolution):
            encode(enc, torch.rand(16, 16, 3))
        with pytest.raises(BadResolution):
            enc(torch.rand(4, 8, 8, 3))


class TestEncodePatch:
    def test_full_image_as_patch_matches_encode(self, enc):
        image = random_image(7)
        attrs = encode(enc, image)
        codes = encode_patch(enc, image)
        assert torch.equal(codes.shape, attrs.codes.shape)
        assert torch.equal(codes.appearance, attrs.codes.appearance)

    def test_resolution_independence_on_constant_input(self, enc):
        for side in (32, 64):
            codes = encode_patch(enc, torch.full((side, side, 3), 0.5))
            assert codes.shape.shape == (16,)
            assert bool(torch.isfinite(codes.shape).all())
            assert bool(torch.isfinite(codes.appearance).all())


class TestHidePatch:
    def test_fill_with_original_is_identity(self):
        image = random_image(3, side=32)
        spec = PatchSpec(center=(0.5, 0.5), scale=0.5, size=16)
        # a constant image hidden with the same constant stays identical
        constant = torch.full((32, 32, 3), 0.25)
        hidden, _ = hide_patch(constant, spec, (0.25, 0.25, 0.25))
        assert torch.equal(hidden, constant)
        del image

    def test_pixel_count_and_region(self):
        image = torch.zeros(32, 32, 3)
        spec = PatchSpec(center=(0.5, 0.5), scale=0.5, size=16)
        hidden, (r0, r1, c0, c1) = hide_patch(image, spec, (1.0, 1.0, 1.0))
        assert (r1 - r0) * (c1 - c0) == 256
        assert int((hidden != image).any(dim=-1).sum()) == 256

    def test_outside_pixels_bit_exact(self):
        image = random_image(5, side=48)
        spec = PatchSpec(center=(0.3, 0.7), scale=0.4, size=8)
        hidden, (r0, r1, c0, c1) = hide_patch(image, spec, (0.0, 0.0, 0.0))
        mask = torch.zeros(48, 48, dtype=torch.bool)
        mask[r0:r1, c0:c1] = True
        assert torch.equal(hidden[~mask], image[~mask])

    def test_corner_sweep_stays_in_bounds(self):
        image = random_image(6, side=40)
        for cu in (0.0, 0.5, 1.0):
            for cv in (0.0, 0.5, 1.0):
                spec = PatchSpec(center=(cu, cv), scale=0.5, size=8)
                hidden, (r0, r1, c0, c1) = hide_patch(image, spec, (0.0, 0.0, 0.0))
                assert 0 <= r0 < r1 <= 40 and 0 <= c0 < c1 <= 40

    def test_rejects_bad_image(self):
        with pytest.raises(OutOfBounds):
            hide_patch(torch.rand(8, 8), PatchSpec(center=(0.5, 0.5), scale=0.5, size=4), (0, 0, 0))
