import numpy as np
import pytest

from gaussadv.cameras import make_orbit_viewpoints
from gaussadv.cloud import GaussianCloud, make_synthetic_cloud
from gaussadv.errors import DegenerateCovarianceError, InvalidParameterError
from gaussadv.renderer import RenderSettings, render, render_batch, render_with_grad
from conftest import random_cloud


def _axis_cloud(scales, colors, opacities, zs):
    """Isotropic Gaussians stacked along the camera's optical axis."""
    n = len(zs)
    return GaussianCloud(
        positions=np.array([[z, 0.0, 0.0] for z in zs]),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        scales=np.array([[s, s, s] for s in scales]),
        colors=np.array(colors, dtype=np.float64),
        opacities=np.array(opacities, dtype=np.float64),
    )


def _expected_weights(pose, settings, scales, opacities, zs):
    """Analytic isotropic footprint: w(r) = a * exp(-r^2 / (2 sig2)) with
    sig2 = (f*s/depth)^2 + cov_reg, evaluated per pixel center."""
    w_, h_ = pose.width, pose.height
    ys, xs = np.mgrid[0:h_, 0:w_]
    cx, cy = pose.principal_point
    r2 = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2
    weights = []
    for s, a, z in zip(scales, opacities, zs):
        depth = pose.camera_center()[0] - z  # camera on +x looking at -x
        sig2 = (pose.focal * s / depth) ** 2 + settings.cov_reg
        weights.append(a * np.exp(-0.5 * r2 / sig2))
    return weights


def test_empty_cloud_renders_background():
    cloud = GaussianCloud(
        np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    )
    pose = make_orbit_viewpoints(1, [5.0], 0.0, 32, 60.0)[0]
    st = RenderSettings(background=np.array([0.2, 0.4, 0.6]))
    view = render(cloud, pose, st)
    assert view.all_culled
    assert np.all(view.alpha == 0.0)
    assert np.allclose(view.rgb, [0.2, 0.4, 0.6])
    assert np.all(view.depth == st.far)


def test_single_gaussian_footprint_matches_analytic():
    pose = make_orbit_viewpoints(1, [5.0], 0.0, 65, 60.0)[0]
    st = RenderSettings()
    cloud = _axis_cloud([0.15], [[0.9, 0.2, 0.1]], [0.7], [0.0])
    view = render(cloud, pose, st)
    expected = _expected_weights(pose, st, [0.15], [0.7], [0.0])[0]
    inside = expected > 1e-10
    assert np.max(np.abs(view.alpha[inside] - expected[inside])) < 1e-9
    # alpha peaks at the principal point and decreases radially
    cy, cx = 32, 32
    assert view.alpha[cy, cx] == view.alpha.max()
    row = view.alpha[cy, cx:]
    assert np.all(np.diff(row) <= 1e-12)


def test_two_gaussian_compositing_closed_form():
    pose = make_orbit_viewpoints(1, [5.0], 0.0, 65, 60.0)[0]
    st = RenderSettings(background=np.array([0.0, 0.0, 0.0]))
    c1, c2 = np.array([0.9, 0.1, 0.0]), np.array([0.0, 0.2, 0.8])
    a1, a2 = 0.6, 0.8
    cloud = _axis_cloud([0.12, 0.12], [c1, c2], [a1, a2], [0.5, -0.5])
    view = render(cloud, pose, st)
    # at the exact center pixel both weights equal their opacities
    got = view.rgb[32, 32]
    expected = a1 * c1 + (1 - a1) * a2 * c2
    assert np.allclose(got, expected, atol=1e-12)


def test_front_color_dominates_as_opacity_approaches_one():
    pose = make_orbit_viewpoints(1, [5.0], 0.0, 65, 60.0)[0]
    st = RenderSettings(background=np.zeros(3))
    c1, c2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
    cloud = _axis_cloud([0.12, 0.12], [c1, c2], [0.9999, 1.0], [0.5, -0.5])
    view = render(cloud, pose, st)
    assert np.max(np.abs(view.rgb[32, 32] - c1)) < 2e-4


def test_compositing_conservation_against_product_oracle():
    pose = make_orbit_viewpoints(1, [5.0], 0.0, 65, 60.0)[0]
    st = RenderSettings()
    scales = [0.1, 0.15, 0.2]
    opac = [0.5, 0.7, 0.3]
    zs = [0.6, 0.0, -0.6]
    cloud = _axis_cloud(scales, [[0.5] * 3] * 3, opac, zs)
    view = render(cloud, pose, st)
    weights = _expected_weights(pose, st, scales, opac, zs)
    expected_alpha = 1.0 - (1 - weights[0]) * (1 - weights[1]) * (1 - weights[2])
    assert np.max(np.abs(view.alpha - expected_alpha)) < 1e-9
    assert view.alpha.min() >= 0.0 and view.alpha.max() <= 1.0


def test_depth_is_weighted_mean_and_respects_near_plane():
    pose = make_orbit_viewpoints(1, [5.0], 0.0, 65, 60.0)[0]
    st = RenderSettings()
    cloud = _axis_cloud([0.1, 0.1], [[0.5] * 3] * 2, [0.6, 0.6], [0.8, -0.8])
    view = render(cloud, pose, st)
    covered = view.alpha > 0
    assert np.all(view.depth[covered] >= st.near)
    # center pixel: weighted mean of 4.2 and 5.8 biased toward the front
    d = view.depth[32, 32]
    assert 4.2 <= d <= 5.8
    w1 = 0.6
    expected = (w1 * 4.2 + (1 - w1) * 0.6 * 5.8) / (w1 + (1 - w1) * 0.6)
    assert abs(d - expected) < 1e-9


def test_render_is_bit_deterministic(rng, single_view):
    cloud = random_cloud(rng, 30)
    a = render(cloud, single_view[0])
    b = render(cloud, single_view[0])
    assert np.array_equal(a.rgb, b.rgb)
    assert np.array_equal(a.alpha, b.alpha)
    assert np.array_equal(a.depth, b.depth)


def test_batch_matches_individual_renders(rng, orbit_views):
    cloud = random_cloud(rng, 20)
    batch = render_batch(cloud, orbit_views)
    for pose, view in zip(orbit_views, batch):
        single = render(cloud, pose)
        assert np.array_equal(view.rgb, single.rgb)


def test_translation_equivariance():
    cloud = make_synthetic_cloud("sphere", 100, seed=5)
    pose = make_orbit_viewpoints(1, [4.0], 15.0, 64, 60.0)[0]
    offset = np.array([3.0, -2.0, 1.0])
    moved = cloud.copy()
    moved.positions = moved.positions + offset
    a = render(cloud, pose)
    b = render(moved, pose.shifted(offset))
    assert np.max(np.abs(a.rgb - b.rgb)) < 1e-6


def test_symmetric_sphere_opposite_azimuths():
    cloud = make_synthetic_cloud("sphere", 1200, seed=11)
    views = make_orbit_viewpoints(8, [4.0], 0.0, 64, 60.0)
    batch = render_batch(cloud, views)
    for i in range(4):
        a = batch[i].alpha.mean()
        b = batch[i + 4].alpha.mean()
        assert abs(a - b) < 1e-3


def test_behind_camera_flagged_not_error(rng, single_view):
    cloud = random_cloud(rng, 5)
    cloud.positions[:] += np.array([100.0, 0.0, 0.0])  # behind the +x camera
    view = render(cloud, single_view[0])
    assert view.all_culled
    assert np.allclose(view.rgb, 0.5)


def test_pathological_scale_raises(single_view):
    cloud = GaussianCloud(
        positions=np.zeros((1, 3)),
        rotations=np.array([[1.0, 0, 0, 0]]),
        scales=np.full((1, 3), 1e200),
        colors=np.full((1, 3), 0.5),
        opacities=np.array([0.5]),
    )
    with pytest.raises(DegenerateCovarianceError):
        render(cloud, single_view[0])


def test_upstream_validation(rng, single_view):
    cloud = random_cloud(rng, 3)
    with pytest.raises(InvalidParameterError):
        render_with_grad(cloud, single_view[0], np.zeros((8, 8, 3)))
    bad = np.zeros((64, 64, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(InvalidParameterError):
        render_with_grad(cloud, single_view[0], bad)
