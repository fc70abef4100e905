import math

import pytest
import torch
from scipy.spatial.transform import Rotation as ScipyRotation

from aenerf.geometry import (
    CameraPose,
    DegenerateRotation,
    InvalidRange,
    PatchSpec,
    camera_translation,
    geodesic_rotation_error,
    look_at_rotation,
    matrix_to_rot6d,
    patch_pixel_grid,
    patch_rays,
    pose_angles,
    pose_from_angles,
    project_points,
    rot6d_to_matrix,
    sample_camera_pose,
    sample_camera_poses,
    sample_patch_spec,
)

SQ2 = math.sqrt(2.0)


def random_rotations(n: int, seed: int = 0, dtype=torch.float64) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return rot6d_to_matrix(torch.randn(n, 6, generator=gen, dtype=dtype))


class TestRot6d:
    def test_canonical_basis_gives_identity(self):
        v = torch.tensor([1.0, 0, 0, 0, 1.0, 0], dtype=torch.float64)
        assert torch.allclose(rot6d_to_matrix(v), torch.eye(3, dtype=torch.float64))

    def test_positive_scaling_absorbed(self):
        v = torch.tensor([2.0, 0, 0, 0, 3.0, 0], dtype=torch.float64)
        assert torch.allclose(rot6d_to_matrix(v), torch.eye(3, dtype=torch.float64))

    def test_hand_gram_schmidt_oracle(self):
        # v = (1,1,0, 0,1,0): b1 = (1,1,0)/sqrt2, b2 = (-1,1,0)/sqrt2, b3 = b1 x b2 = (0,0,1)
        v = torch.tensor([1.0, 1.0, 0, 0, 1.0, 0], dtype=torch.float64)
        expected = torch.tensor(
            [[1 / SQ2, -1 / SQ2, 0.0], [1 / SQ2, 1 / SQ2, 0.0], [0.0, 0.0, 1.0]],
            dtype=torch.float64,
        )
        assert torch.allclose(rot6d_to_matrix(v), expected, atol=1e-12)

    def test_orthonormal_det_plus_one_on_random_inputs(self):
        gen = torch.Generator().manual_seed(11)
        v = torch.randn(1000, 6, generator=gen, dtype=torch.float64)
        r = rot6d_to_matrix(v)
        eye = torch.eye(3, dtype=torch.float64).expand_as(r)
        assert torch.allclose(r.transpose(-1, -2) @ r, eye, atol=1e-5)
        assert torch.allclose(torch.linalg.det(r), torch.ones(1000, dtype=torch.float64), atol=1e-5)

    def test_power_of_two_scaling_bitwise_exact(self):
        gen = torch.Generator().manual_seed(3)
        v = torch.randn(100, 6, generator=gen)
        scaled = torch.cat([v[:, :3] * 4.0, v[:, 3:] * 0.5], dim=-1)
        assert torch.equal(rot6d_to_matrix(v), rot6d_to_matrix(scaled))

    def test_arbitrary_positive_scaling_close(self):
        gen = torch.Generator().manual_seed(4)
        v = torch.randn(100, 6, generator=gen, dtype=torch.float64)
        scaled = torch.cat([v[:, :3] * 1.7, v[:, 3:] * 0.31], dim=-1)
        assert torch.allclose(rot6d_to_matrix(v), rot6d_to_matrix(scaled), atol=1e-12)

    def test_round_trip_from_rotation(self):
        r = random_rotations(1000, seed=5)
        again = rot6d_to_matrix(matrix_to_rot6d(r))
        assert torch.allclose(r, again, atol=1e-6)

    def test_degenerate_zero_half(self):
        with pytest.raises(DegenerateRotation):
            rot6d_to_matrix(torch.tensor([0.0, 0, 0, 0, 1.0, 0]))

    def test_degenerate_parallel_halves(self):
        with pytest.raises(DegenerateRotation):
            rot6d_to_matrix(torch.tensor([1.0, 2.0, 3.0, 2.0, 4.0, 6.0]))


class TestGeodesicError:
    def test_identical_rotations(self):
        r = random_rotations(10)
        assert torch.allclose(geodesic_rotation_error(r, r), torch.zeros(10, dtype=torch.float64), atol=1e-6)

    def test_quarter_turn_about_z(self):
        rz = torch.tensor(
            [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], dtype=torch.float64
        )
        err = geodesic_rotation_error(torch.eye(3, dtype=torch.float64), rz)
        assert abs(float(err) - math.pi / 2) < 1e-12

    def test_matches_axis_angle_oracle(self):
        r1 = random_rotations(50, seed=21)
        r2 = random_rotations(50, seed=22)
        ours = geodesic_rotation_error(r1, r2)
        rel = (r1.transpose(-1, -2) @ r2).numpy()
        oracle = torch.tensor(
            [float(torch.linalg.norm(torch.tensor(ScipyRotation.from_matrix(m).as_rotvec()))) for m in rel]
        )
        assert torch.allclose(ours.float(), oracle.float(), atol=1e-5)


class TestCameraSampling:
    def test_degenerate_radius_range(self):
        gen = torch.Generator().manual_seed(0)
        pose = sample_camera_pose(gen, (3.0, 3.0), (0.0, 90.0))
        assert pose.radius == 3.0
        assert abs(float(torch.linalg.norm(pose.center)) - 3.0) < 1e-5

    def test_uniform_area_band_mean_height(self):
        # closed form: z uniform on [sin(lo), sin(hi)] => mean = rho*(z_lo+z_hi)/2
        gen = torch.Generator().manual_seed(123)
        n = 10_000
        rot, radii = sample_camera_poses(gen, n, (3.0, 3.0), (10.0, 60.0))
        z = 3.0 * rot[:, 2, 2]  # center z = radius * third column z
        z_lo, z_hi = math.sin(math.radians(10.0)), math.sin(math.radians(60.0))
        analytic_mean = 3.0 * (z_lo + z_hi) / 2.0
        stderr = 3.0 * (z_hi - z_lo) / math.sqrt(12.0) / math.sqrt(n)
        assert abs(float(z.mean()) - analytic_mean) < 3.0 * stderr

    def test_look_at_constraint(self):
        gen = torch.Generator().manual_seed(9)
        for _ in range(20):
            pose = sample_camera_pose(gen, (2.0, 4.0), (5.0, 85.0))
            toward_camera = pose.center / torch.linalg.norm(pose.center)
            assert torch.allclose(pose.rotation[:, 2], toward_camera, atol=1e-5)

    def test_upper_hemisphere(self):
        gen = torch.Generator().manual_seed(10)
        rot, radii = sample_camera_poses(gen, 500, (2.8, 3.2), (0.0, 90.0))
        centers = radii[:, None] * rot[:, :, 2]
        assert bool((centers[:, 2] >= -1e-6).all())

    def test_deterministic_for_fixed_seed(self):
        a = sample_camera_pose(torch.Generator().manual_seed(77), (2.0, 3.0), (0.0, 90.0))
        b = sample_camera_pose(torch.Generator().manual_seed(77), (2.0, 3.0), (0.0, 90.0))
        assert torch.equal(a.rotation, b.rotation) and a.radius == b.radius

    def test_invalid_ranges(self):
        gen = torch.Generator().manual_seed(0)
        with pytest.raises(InvalidRange):
            sample_camera_pose(gen, (3.0, 2.0), (0.0, 90.0))
        with pytest.raises(InvalidRange):
            sample_camera_pose(gen, (-1.0, 2.0), (0.0, 90.0))
        with pytest.raises(InvalidRange):
            sample_camera_pose(gen, (2.0, 3.0), (-5.0, 90.0))
        with pytest.raises(InvalidRange):
            sample_camera_pose(gen, (2.0, 3.0), (40.0, 95.0))


class TestCameraTranslation:
    def test_identity_rotation_unit_radius(self):
        t = camera_translation(torch.eye(3, dtype=torch.float64), 1.0)
        assert torch.allclose(t, torch.tensor([0.0, 0.0, -1.0], dtype=torch.float64), atol=1e-12)

    def test_world_to_camera_maps_center_to_origin(self):
        gen = torch.Generator().manual_seed(31)
        for _ in range(20):
            pose = sample_camera_pose(gen, (1.5, 4.0), (0.0, 90.0))
            t = pose.translation
            mapped = pose.rotation.T @ pose.center + t
            assert torch.allclose(mapped, torch.zeros(3), atol=1e-5)

    def test_center_norm_equals_radius(self):
        gen = torch.Generator().manual_seed(32)
        pose = sample_camera_pose(gen, (2.0, 2.0), (0.0, 90.0))
        assert abs(float(torch.linalg.norm(pose.center)) - 2.0) < 1e-5

    def test_rotated_pose_keeps_origin_at_principal_point(self):
        # rotating the camera about z re-derives translation consistently:
        # the world origin projects to the principal point either way.
        base = pose_from_angles(20.0, 35.0, 3.0)
        rz = torch.tensor([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        rotated = CameraPose(rotation=rz @ base.rotation, radius=base.radius)
        origin = torch.zeros(3)
        for pose in (base, rotated):
            px = project_points(pose, origin, focal=1.2)
            assert torch.allclose(px, torch.tensor([0.5, 0.5]), atol=1e-6)

    def test_origin_reprojection_invariant_float64(self):
        gen = torch.Generator().manual_seed(40)
        rot, radii = sample_camera_poses(gen, 100, (2.0, 4.0), (0.0, 90.0), dtype=torch.float64)
        for i in range(100):
            pose = CameraPose(rotation=rot[i], radius=float(radii[i]))
            px = project_points(pose, torch.zeros(3, dtype=torch.float64), focal=1.2)
            assert torch.allclose(px, torch.tensor([0.5, 0.5], dtype=torch.float64), atol=1e-5)


class TestPatchSpec:
    def test_full_image_center_forced(self):
        gen = torch.Generator().manual_seed(0)
        spec = sample_patch_spec(gen, 32, (1.0, 1.0))
        assert spec.center == (0.5, 0.5) and spec.scale == 1.0

    def test_center_uniform_over_admissible_square(self):
        from scipy.stats import chisquare

        gen = torch.Generator().manual_seed(99)
        n = 10_000
        us, vs = [], []
        for _ in range(n):
            spec = sample_patch_spec(gen, 16, (0.25, 0.25))
            us.append(spec.center[0])
            vs.append(spec.center[1])
        u = torch.tensor(us)
        v = torch.tensor(vs)
        assert float(u.min()) >= 0.125 and float(u.max()) <= 0.875
        # chi-square uniformity over a 4x4 grid of the admissible square
        bins_u = ((u - 0.125) / 0.75 * 4).clamp(0, 3.999).long()
        bins_v = ((v - 0.125) / 0.75 * 4).clamp(0, 3.999).long()
        counts = torch.zeros(16)
        for bu, bv in zip(bins_u, bins_v):
            counts[bu * 4 + bv] += 1
        _, p = chisquare(counts.numpy())
        assert p > 0.01

    def test_grid_stays_inside_unit_square(self):
        gen = torch.Generator().manual_seed(123)
        for _ in range(200):
            spec = sample_patch_spec(gen, 8, (0.05, 1.0))
            grid = patch_pixel_grid(
                torch.tensor([spec.center]), torch.tensor([spec.scale]), spec.size
            )
            assert float(grid.min()) >= 0.0 and float(grid.max()) <= 1.0

    def test_corner_centers_clamped(self):
        for cu in (0.0, 0.5, 1.0):
            for cv in (0.0, 0.5, 1.0):
                spec = PatchSpec(center=(cu, cv), scale=0.5, size=8)
                grid = patch_pixel_grid(
                    torch.tensor([spec.center]), torch.tensor([spec.scale]), 8
                )
                assert float(grid.min()) >= 0.0 and float(grid.max()) <= 1.0

    def test_invalid_scale_range(self):
        gen = torch.Generator().manual_seed(0)
        with pytest.raises(InvalidRange):
            sample_patch_spec(gen, 8, (0.0, 0.5))
        with pytest.raises(InvalidRange):
            sample_patch_spec(gen, 8, (0.5, 1.5))


class TestPatchRays:
    def test_default_patch_has_1024_rays(self):
        pose = pose_from_angles(30.0, 40.0, 3.0)
        bundle = patch_rays(pose, 1.2, PatchSpec.full_image(32), near=1.0, far=5.0)
        assert bundle.origins.shape == (1024, 3)

    def test_directions_unit_norm(self):
        pose = pose_from_angles(10.0, 25.0, 2.5)
        bundle = patch_rays(pose, 1.0, PatchSpec(center=(0.3, 0.6), scale=0.4, size=16), 1.0, 5.0)
        norms = torch.linalg.norm(bundle.directions, dim=-1)
        assert torch.allclose(norms, torch.ones_like(norms), atol=1e-6)

    def test_center_pixel_is_optical_axis(self):
        pose = pose_from_angles(33.0, 21.0, 3.0)
        spec = PatchSpec.full_image(33)  # odd size: the middle pixel sits at (0.5, 0.5)
        bundle = patch_rays(pose, 1.2, spec, 1.0, 5.0)
        center_dir = bundle.directions[(33 * 33) // 2]
        optical_axis = -pose.rotation[:, 2]
        assert torch.allclose(center_dir, optical_axis, atol=1e-6)

    def test_origins_equal_camera_center(self):
        pose = pose_from_angles(0.0, 45.0, 3.0)
        bundle = patch_rays(pose, 1.2, PatchSpec.full_image(8), 1.0, 5.0)
        assert torch.allclose(bundle.origins, pose.center.expand(64, 3), atol=1e-6)

    def test_halving_scale_shrinks_corner_angle(self):
        pose = pose_from_angles(12.0, 30.0, 3.0)
        angles = []
        for scale in (0.8, 0.4):
            spec = PatchSpec(center=(0.5, 0.5), scale=scale, size=8)
            bundle = patch_rays(pose, 1.2, spec, 1.0, 5.0)
            a, b = bundle.directions[0], bundle.directions[-1]
            angles.append(float(torch.arccos((a * b).sum().clamp(-1, 1))))
        assert angles[1] < angles[0]


class TestPoseAngles:
    def test_round_trip(self):
        pose = pose_from_angles(110.0, 42.0, 2.7)
        az, el = pose_angles(pose)
        assert abs(az - 110.0) < 1e-4 and abs(el - 42.0) < 1e-4
        assert abs(pose.radius - 2.7) < 1e-9

    def test_pole_fallback_is_valid_rotation(self):
        r = look_at_rotation(torch.tensor([[0.0, 0.0, 1.0]]))[0]
        assert torch.allclose(r.T @ r, torch.eye(3), atol=1e-6)
