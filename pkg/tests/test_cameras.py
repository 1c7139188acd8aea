import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from planedit.cameras import CameraPose, generate_rays, pose_from_angles, sample_camera_ring
from planedit.errors import ValidationError


def identity_pose(focal=2.0, res=2):
    return CameraPose(
        cam_to_world=torch.eye(4, dtype=torch.float64),
        focal=focal,
        cx=res / 2.0,
        cy=res / 2.0,
        near=0.1,
        far=5.0,
    )


def test_identity_pose_rays_are_mirror_symmetric():
    d = generate_rays(identity_pose(), 2, 2).directions
    assert torch.allclose(d[0, 0, 0], -d[0, 1, 0])
    assert torch.allclose(d[0, 0, 1], -d[1, 0, 1])
    assert torch.allclose(d[:, :, 2], d[0, 0, 2].expand(2, 2))
    assert (d[:, :, 2] < 0).all()


def test_identity_pose_rays_start_at_origin():
    rays = generate_rays(identity_pose(), 2, 2)
    assert torch.equal(rays.origins, torch.zeros(2, 2, 3))
    assert rays.t_near == 0.1 and rays.t_far == 5.0


def test_ray_directions_are_unit_length():
    rays = generate_rays(pose_from_angles(33.0, 21.0, 2.7), 8, 8)
    assert torch.allclose(rays.directions.norm(dim=-1), torch.ones(8, 8), atol=1e-6)


def test_flipping_camera_about_its_x_axis_negates_viewing_axis():
    flip = torch.eye(4, dtype=torch.float64)
    flip[1, 1] = -1.0
    flip[2, 2] = -1.0
    flipped = CameraPose(flip, focal=2.0, cx=1.0, cy=1.0, near=0.1, far=5.0)
    assert torch.allclose(flipped.forward_axis, -identity_pose().forward_axis)


def test_center_ray_points_along_forward_axis():
    pose = pose_from_angles(40.0, 15.0, 2.7, image_res=65)
    center = generate_rays(pose, 65, 65).directions[32, 32]
    assert torch.allclose(center, pose.forward_axis.to(center.dtype), atol=1e-6)


def test_ring_of_four_lands_on_the_axes():
    poses = sample_camera_ring(4, radius=2.0)
    want = torch.tensor(
        [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [0.0, -2.0, 0.0]],
        dtype=torch.float64,
    )
    assert torch.allclose(torch.stack([p.center for p in poses]), want, atol=1e-12)


def test_ring_azimuth_offset_shifts_cameras_cyclically():
    base = sample_camera_ring(4, radius=2.7, elevation_deg=10.0)
    shifted = sample_camera_ring(4, radius=2.7, elevation_deg=10.0, azimuth_offset_deg=90.0)
    for k in range(4):
        assert torch.allclose(shifted[k].cam_to_world, base[(k + 1) % 4].cam_to_world, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(
    az=st.floats(0.0, 360.0),
    el=st.floats(-80.0, 80.0),
    radius=st.floats(1.2, 6.0),
)
def test_pose_rotation_block_is_orthonormal(az, el, radius):
    pose = pose_from_angles(az, el, radius)
    r = pose.cam_to_world[:3, :3]
    assert (r.T @ r - torch.eye(3, dtype=torch.float64)).abs().max() < 1e-6
    assert torch.det(r) > 0
    pose.validate()


def test_default_clip_range_brackets_the_scene_cube():
    pose = pose_from_angles(123.0, -30.0, 2.7)
    assert pose.near <= 2.7 - math.sqrt(3.0)
    assert pose.far >= 2.7 + math.sqrt(3.0)


def test_validate_rejects_sheared_rotation():
    m = torch.eye(4, dtype=torch.float64)
    m[0, 1] = 0.3
    with pytest.raises(ValidationError):
        CameraPose(m, 2.0, 1.0, 1.0, 0.1, 5.0).validate()


def test_validate_rejects_bad_clip_range():
    eye = torch.eye(4, dtype=torch.float64)
    with pytest.raises(ValidationError):
        CameraPose(eye, 2.0, 1.0, 1.0, 2.0, 1.0).validate()
    with pytest.raises(ValidationError):
        CameraPose(eye, 2.0, 1.0, 1.0, 0.0, 1.0).validate()


def test_pose_json_round_trip(tmp_path):
    pose = pose_from_angles(77.0, 12.0, 3.1)
    path = tmp_path / "pose.json"
    pose.save(path)
    back = CameraPose.load(path)
    assert torch.equal(back.cam_to_world, pose.cam_to_world)
    for f in ("focal", "cx", "cy", "near", "far"):
        assert getattr(back, f) == getattr(pose, f)
    with pytest.raises(ValidationError):
        CameraPose.from_json_dict({"focal": 2.0})


def test_rescale_touches_intrinsics_only():
    pose = pose_from_angles(0.0, 0.0, 2.7, image_res=64)
    half = pose.rescale(0.5)
    assert half.focal == pose.focal * 0.5
    assert half.cx == pose.cx * 0.5 and half.cy == pose.cy * 0.5
    assert torch.equal(half.cam_to_world, pose.cam_to_world)
    assert half.near == pose.near and half.far == pose.far


def test_angle_and_size_limits_are_enforced():
    with pytest.raises(ValidationError):
        pose_from_angles(0.0, 90.0, 2.7)
    with pytest.raises(ValidationError):
        pose_from_angles(0.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        sample_camera_ring(0, 2.7)
    with pytest.raises(ValidationError):
        generate_rays(identity_pose(), 0, 4)
