import numpy as np
import pytest

from gaussadv.cameras import make_orbit_viewpoints
from gaussadv.cloud import GaussianCloud, make_synthetic_cloud
from gaussadv.errors import TooFewGaussiansError
from gaussadv.filtering import (
    FilterConfig,
    artifact_removal,
    denoise_sigmas,
    filter_cloud,
    kth_neighbor_sets,
    local_density,
    local_density_exhaustive,
    make_planted_cloud,
    structural_denoise,
    topological_prune,
)


def _point_cloud(positions):
    n = positions.shape[0]
    return GaussianCloud(
        positions=positions,
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        scales=np.full((n, 3), 0.05),
        colors=np.full((n, 3), 0.5),
        opacities=np.full(n, 0.8),
    )


@pytest.fixture
def views():
    return make_orbit_viewpoints(4, [3.0, 5.0], 10.0, 128, 60.0)


def test_density_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    cloud = _point_cloud(rng.normal(size=(200, 3)))
    fast = local_density(cloud, k=16)
    slow = local_density_exhaustive(cloud, k=16)
    assert np.array_equal(fast, slow)


def test_density_neighbor_sets_match_oracle():
    rng = np.random.default_rng(1)
    cloud = _point_cloud(rng.normal(size=(60, 3)))
    from scipy.spatial import cKDTree

    _, idx = cKDTree(cloud.positions).query(cloud.positions, k=9)
    oracle = kth_neighbor_sets(cloud.positions, 8)
    for i in range(60):
        assert set(idx[i, 1:].tolist()) == oracle[i]


def test_duplicate_positions_hit_density_cap():
    cloud = _point_cloud(np.zeros((2, 3)))
    rho = local_density(cloud, k=1, density_cap=1e12)
    assert np.all(rho == 1e12)


def test_uniform_grid_interior_equal_density():
    xs = np.arange(6, dtype=np.float64)
    grid = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
    cloud = _point_cloud(grid)
    rho = local_density_exhaustive(cloud, k=6)
    interior = [
        i for i, p in enumerate(grid)
        if np.all(p >= 1) and np.all(p <= 4)
    ]
    assert len(interior) > 0
    vals = rho[interior]
    assert np.max(np.abs(vals - vals[0])) < 1e-6 * vals[0]


def test_displaced_point_has_minimal_density():
    xs = np.arange(5, dtype=np.float64)
    grid = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = np.concatenate([grid, [[250.0, 250.0, 250.0]]])
    cloud = _point_cloud(grid)
    rho = local_density_exhaustive(cloud, k=4)
    assert np.argmin(rho) == len(grid) - 1


def test_too_few_gaussians():
    cloud = _point_cloud(np.zeros((3, 3)))
    with pytest.raises(TooFewGaussiansError):
        local_density(cloud, k=3)


def test_prune_removes_exactly_floor_pn():
    rng = np.random.default_rng(2)
    cloud = _point_cloud(rng.normal(size=(1000, 3)))
    cfg = FilterConfig(k=16, prune_percentile=0.105, min_survivors=1)
    pruned, index_map, removed = topological_prune(cloud, cfg)
    assert removed == 105  # floor(0.105 * 1000)
    assert pruned.count == 895
    # removed are exactly the lowest-density ones
    rho = local_density(cloud, 16)
    expected_removed = set(np.argsort(rho, kind="stable")[:105].tolist())
    assert set(index_map.removed_indices.tolist()) == expected_removed


@pytest.mark.parametrize("n", [150, 333, 1000])
def test_prune_count_formula_various_sizes(n):
    rng = np.random.default_rng(n)
    cloud = _point_cloud(rng.normal(size=(n, 3)))
    cfg = FilterConfig(k=8, prune_percentile=0.105, min_survivors=1)
    _, _, removed = topological_prune(cloud, cfg)
    assert removed == int(np.floor(0.105 * n))


def test_prune_tiny_percentile_removes_nothing():
    rng = np.random.default_rng(3)
    cloud = _point_cloud(rng.normal(size=(50, 3)))
    cfg = FilterConfig(k=4, prune_percentile=1e-9, min_survivors=1)
    _, index_map, removed = topological_prune(cloud, cfg)
    assert removed == 0
    assert np.array_equal(index_map.new_to_old, np.arange(50))


def test_prune_monotone_in_percentile():
    rng = np.random.default_rng(4)
    cloud = _point_cloud(rng.normal(size=(300, 3)))
    survivors = []
    for p in (0.05, 0.15, 0.35):
        _, imap, _ = topological_prune(cloud, FilterConfig(k=8, prune_percentile=p, min_survivors=1))
        survivors.append(set(imap.new_to_old.tolist()))
    assert survivors[2] <= survivors[1] <= survivors[0]


def test_prune_respects_min_survivors():
    rng = np.random.default_rng(5)
    cloud = _point_cloud(rng.normal(size=(40, 3)))
    cfg = FilterConfig(k=4, prune_percentile=0.99, min_survivors=25)
    pruned, imap, removed = topological_prune(cloud, cfg)
    assert pruned.count == 25
    rho = local_density(cloud, 4)
    densest = set(np.argsort(-rho, kind="stable")[:25].tolist())
    assert set(imap.new_to_old.tolist()) == densest


def test_planted_floaters_are_the_removed_ones():
    planted = make_planted_cloud(base_count=950, floaters=50, specks=0, seed=7)
    cfg = FilterConfig(k=16, prune_percentile=0.06, min_survivors=1)
    _, imap, removed = topological_prune(planted.cloud, cfg)
    removed_set = set(imap.removed_indices.tolist())
    assert set(planted.floater_indices.tolist()) <= removed_set


def test_denoise_zero_gain_is_bit_exact_noop(views):
    cloud = make_synthetic_cloud("box-car", 200, seed=1)
    out = structural_denoise(cloud, views, FilterConfig(sigma_gain=0.0))
    assert np.array_equal(out.as_params(), cloud.as_params())


def test_denoise_worked_example():
    # s = (1,1,1) inflated by sigma = 1: s' = sqrt(2), opacity scaled by 2^-1.5
    cloud = GaussianCloud(
        positions=np.zeros((1, 3)),
        rotations=np.array([[1.0, 0, 0, 0]]),
        scales=np.ones((1, 3)),
        colors=np.full((1, 3), 0.5),
        opacities=np.array([0.8]),
    )
    views = make_orbit_viewpoints(1, [5.0], 0.0, 64, 60.0)
    f = views[0].focal
    cfg = FilterConfig(sigma_gain=f / 5.0)  # sigma = gain * (5 / f) = 1
    out = structural_denoise(cloud, views, cfg)
    assert np.allclose(out.scales, np.sqrt(2.0))
    assert np.isclose(out.opacities[0], 0.8 / 2**1.5)


def test_denoise_conserves_opacity_volume_product(views):
    cloud = make_synthetic_cloud("box-car", 300, seed=2)
    cfg = FilterConfig(sigma_gain=0.05)
    out = structural_denoise(cloud, views, cfg)
    before = cloud.opacities * np.prod(cloud.scales, axis=1)
    after = out.opacities * np.prod(out.scales, axis=1)
    # opacities stayed in [0,1], so the clamp never engaged here
    assert np.max(np.abs(before - after)) < 1e-9
    assert np.all(out.scales >= cloud.scales)


def test_denoise_sigma_uses_minimum_over_views(views):
    cloud = make_synthetic_cloud("sphere", 50, seed=3)
    sig = denoise_sigmas(cloud, views, sigma_gain=1.0)
    expected = np.full(cloud.count, np.inf)
    for pose in views:
        t = cloud.positions @ pose.rotation.T + pose.translation
        expected = np.minimum(expected, np.linalg.norm(t, axis=1) / pose.focal)
    assert np.allclose(sig, expected)


def test_artifact_removal_pipeline_ordering(views):
    planted = make_planted_cloud(base_count=950, floaters=20, specks=30, seed=7)
    cfg = FilterConfig()

    def ar(prune, denoise):
        filtered, imap, _ = filter_cloud(planted.cloud, views, cfg, prune=prune, denoise=denoise)
        return artifact_removal(planted, filtered, imap)

    ar_tp = ar(True, False)
    ar_sd = ar(False, True)
    ar_both = ar(True, True)
    assert ar_both > ar_sd > ar_tp
    assert ar_both >= 0.8
