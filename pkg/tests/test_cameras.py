import numpy as np
import pytest

from gaussadv.cameras import CameraPose, focal_from_fov, look_at_pose, make_orbit_viewpoints
from gaussadv.errors import InvalidParameterError


def test_paper_sweep_has_36_poses():
    views = make_orbit_viewpoints(12, [3.0, 5.0, 10.0], 10.0, 512, 60.0)
    assert len(views) == 36
    assert views.grid_shape() == (12, 3)


def test_single_pose_sits_on_x_axis():
    views = make_orbit_viewpoints(1, [5.0], 0.0, 64, 60.0)
    pose = views[0]
    assert np.allclose(pose.camera_center(), [5.0, 0.0, 0.0], atol=1e-12)
    # looking back at the origin: +z camera axis points along -x
    assert np.allclose(pose.rotation[2], [-1.0, 0.0, 0.0], atol=1e-12)


def test_all_orbit_rotations_orthonormal():
    views = make_orbit_viewpoints(12, [3.0, 5.0, 10.0], 10.0, 512, 60.0)
    for pose in views:
        assert np.allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-9)


def test_optical_axis_passes_through_centroid():
    center = np.array([0.3, -0.2, 0.15])
    views = make_orbit_viewpoints(8, [2.0, 7.0], 25.0, 128, 50.0, center=center)
    for pose in views:
        cam = pose.camera_center()
        axis = pose.rotation[2]  # forward, world frame
        offset = (center - cam) - np.dot(center - cam, axis) * axis
        assert np.linalg.norm(offset) < 1e-6


def test_focal_from_fov():
    assert np.isclose(focal_from_fov(90.0, 512), 256.0)
    with pytest.raises(InvalidParameterError):
        focal_from_fov(0.0, 512)


def test_camera_transforms_roundtrip():
    pose = look_at_pose(np.array([2.0, 1.0, 3.0]), np.zeros(3), 100.0, (64, 64))
    pts = np.random.default_rng(0).normal(size=(10, 3))
    cam = pose.world_to_camera(pts)
    back = (cam - pose.translation) @ pose.rotation
    assert np.allclose(back, pts, atol=1e-12)


def test_shifted_preserves_view():
    pose = look_at_pose(np.array([4.0, 0.0, 1.0]), np.zeros(3), 80.0, (32, 32))
    offset = np.array([1.5, -2.0, 0.5])
    moved = pose.shifted(offset)
    pts = np.random.default_rng(1).normal(size=(5, 3))
    assert np.allclose(pose.world_to_camera(pts), moved.world_to_camera(pts + offset), atol=1e-9)


def test_invalid_orbit_parameters():
    with pytest.raises(InvalidParameterError):
        make_orbit_viewpoints(0, [3.0])
    with pytest.raises(InvalidParameterError):
        make_orbit_viewpoints(4, [])
    with pytest.raises(InvalidParameterError):
        make_orbit_viewpoints(4, [-1.0])


def test_bad_rotation_rejected():
    with pytest.raises(InvalidParameterError):
        CameraPose(
            rotation=np.eye(3) * 2.0,
            translation=np.zeros(3),
            focal=50.0,
            principal_point=np.array([16.0, 16.0]),
            resolution=(32, 32),
        )
