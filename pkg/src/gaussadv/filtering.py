"""Physical plausibility filtering.

Two stages: topological pruning drops Gaussians whose k-nearest-neighbor
density falls below a percentile threshold of the density distribution;
structural denoising inflates scales by a camera-distance-proportional
sigma and rescales opacity so the opacity-volume product is conserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cameras import ViewpointSet
from .cloud import GaussianCloud, IndexMap, make_synthetic_cloud
from .errors import InvalidParameterError, TooFewGaussiansError


@dataclass
class FilterConfig:
    k: int = 16
    prune_percentile: float = 0.105
    sigma_gain: float = 0.01
    min_survivors: int = 16
    density_cap: float = 1e12

    def __post_init__(self):
        if self.k < 1:
            raise InvalidParameterError("k must be >= 1")
        if not 0.0 < self.prune_percentile < 1.0:
            raise InvalidParameterError("prune percentile must be in (0, 1)")


def _ball_density(k: int, radius: np.ndarray, cap: float) -> np.ndarray:
    """Density = k over the volume of the k-th neighbor ball."""
    volume = (4.0 / 3.0) * np.pi * radius**3
    with np.errstate(divide="ignore"):
        rho = np.where(volume > 0.0, k / volume, np.inf)
    return np.minimum(rho, cap)


def local_density(cloud: GaussianCloud, k: int, density_cap: float = 1e12) -> np.ndarray:
    """Per-Gaussian kNN density via a kd-tree. Requires N > k."""
    n = cloud.count
    if n <= k:
        raise TooFewGaussiansError(f"need more than k={k} Gaussians, have {n}")
    tree = cKDTree(cloud.positions)
    # k+1 because each point is its own nearest neighbor.
    dists, _ = tree.query(cloud.positions, k=k + 1)
    return _ball_density(k, dists[:, k], density_cap)


def local_density_exhaustive(
    cloud: GaussianCloud, k: int, density_cap: float = 1e12
) -> np.ndarray:
    """O(N^2) reference implementation used as the kNN oracle in tests."""
    n = cloud.count
    if n <= k:
        raise TooFewGaussiansError(f"need more than k={k} Gaussians, have {n}")
    diffs = cloud.positions[:, None, :] - cloud.positions[None, :, :]
    d = np.sqrt(np.sum(diffs**2, axis=2))
    d_sorted = np.sort(d, axis=1)
    return _ball_density(k, d_sorted[:, k], density_cap)


def kth_neighbor_sets(positions: np.ndarray, k: int) -> list[set[int]]:
    """Exhaustive k-nearest neighbor index sets (excluding self)."""
    diffs = positions[:, None, :] - positions[None, :, :]
    d = np.sqrt(np.sum(diffs**2, axis=2))
    np.fill_diagonal(d, np.inf)
    idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    return [set(row.tolist()) for row in idx]


def topological_prune(
    cloud: GaussianCloud, config: FilterConfig
) -> tuple[GaussianCloud, IndexMap, int]:
    """Remove Gaussians below the density percentile threshold.

    Returns (pruned cloud, index map, removed count). If the threshold
    would leave fewer than min_survivors, the densest min_survivors are
    kept instead.
    """
    densities = local_density(cloud, config.k, config.density_cap)
    # Empirical p-quantile as an order statistic: with distinct densities
    # exactly floor(p*N) fall below the threshold.
    m = int(np.floor(config.prune_percentile * cloud.count))
    if m <= 0:
        tau = -np.inf
    else:
        tau = np.partition(densities, m)[m]
    keep = densities >= tau
    if keep.sum() < config.min_survivors:
        # Densest first; stable tie-break on the original index.
        order = np.argsort(-densities, kind="stable")
        keep = np.zeros(cloud.count, dtype=bool)
        keep[order[: config.min_survivors]] = True
    survivors = np.flatnonzero(keep)
    pruned = GaussianCloud(
        cloud.positions[survivors],
        cloud.rotations[survivors],
        cloud.scales[survivors],
        cloud.colors[survivors],
        cloud.opacities[survivors],
    )
    index_map = IndexMap(old_count=cloud.count, new_to_old=survivors)
    return pruned, index_map, int(cloud.count - survivors.size)


def denoise_sigmas(
    cloud: GaussianCloud, views: ViewpointSet, sigma_gain: float
) -> np.ndarray:
    """Per-Gaussian smoothing sigma: gain times the smallest camera-space
    center distance over focal length across all views."""
    if len(views) == 0:
        raise InvalidParameterError("need at least one view")
    ratios = np.full(cloud.count, np.inf)
    for pose in views:
        t = cloud.positions @ pose.rotation.T + pose.translation
        ratios = np.minimum(ratios, np.linalg.norm(t, axis=1) / pose.focal)
    return sigma_gain * ratios


def structural_denoise(
    cloud: GaussianCloud, views: ViewpointSet, config: FilterConfig
) -> GaussianCloud:
    """Inflate scales by the camera-aware sigma, conserving opacity*volume.

    s' = sqrt(s^2 + sigma^2) per axis, and opacity is multiplied by
    prod(s)/prod(s') (then clamped to [0, 1]). sigma_gain == 0 is a
    bit-exact no-op.
    """
    if config.sigma_gain == 0.0:
        return cloud.copy()
    sigma = denoise_sigmas(cloud, views, config.sigma_gain)
    new_scales = np.sqrt(cloud.scales**2 + sigma[:, None] ** 2)
    det_ratio = np.prod(cloud.scales, axis=1) / np.prod(new_scales, axis=1)
    new_opacities = np.clip(cloud.opacities * det_ratio, 0.0, 1.0)
    return GaussianCloud(
        cloud.positions.copy(),
        cloud.rotations.copy(),
        new_scales,
        cloud.colors.copy(),
        new_opacities,
    )


def filter_cloud(
    cloud: GaussianCloud,
    views: ViewpointSet,
    config: FilterConfig | None = None,
    prune: bool = True,
    denoise: bool = True,
) -> tuple[GaussianCloud, IndexMap, int]:
    """Run the full pruning + denoising pipeline."""
    config = config or FilterConfig()
    index_map = IndexMap.identity(cloud.count)
    removed = 0
    out = cloud
    if prune:
        out, index_map, removed = topological_prune(out, config)
    if denoise:
        out = structural_denoise(out, views, config)
    return out, index_map, removed


# ---------------------------------------------------------------------------
# Planted-artifact suite: a base asset contaminated with known artifacts, so
# the removal rate of a filtering strategy can be measured exactly.
# ---------------------------------------------------------------------------

VISIBILITY_EPS = 0.01


@dataclass
class PlantedCloud:
    cloud: GaussianCloud
    floater_indices: np.ndarray  # isolated low-density clumps: pruning targets
    speck_indices: np.ndarray  # sub-resolution surface specks: denoising targets

    @property
    def planted_indices(self) -> np.ndarray:
        return np.concatenate([self.floater_indices, self.speck_indices])


def make_planted_cloud(
    base_count: int = 950,
    floaters: int = 20,
    specks: int = 30,
    seed: int = 7,
    shape: str = "box-car",
) -> PlantedCloud:
    """Contaminate a synthetic asset with two artifact classes.

    Floaters are isolated mid-scale Gaussians far off the surface; specks
    are near-zero-scale Gaussians duplicated onto surface points. Floaters
    fall to density-based pruning, specks to opacity suppression under
    structural denoising.
    """
    base = make_synthetic_cloud(shape, base_count, seed)
    rng = np.random.default_rng(seed + 1)

    dir_f = rng.normal(size=(floaters, 3))
    dir_f /= np.linalg.norm(dir_f, axis=1, keepdims=True)
    pos_f = dir_f * rng.uniform(2.5, 4.0, (floaters, 1))
    scale_f = rng.uniform(0.02, 0.05, (floaters, 3))

    hosts = rng.choice(base_count, size=specks, replace=False)
    pos_s = base.positions[hosts] + 1e-4 * rng.normal(size=(specks, 3))
    scale_s = np.full((specks, 3), 1e-5)

    ident = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (floaters + specks, 1))
    positions = np.concatenate([base.positions, pos_f, pos_s])
    rotations = np.concatenate([base.rotations, ident])
    scales = np.concatenate([base.scales, scale_f, scale_s])
    colors = np.concatenate(
        [base.colors, rng.uniform(0.2, 0.8, (floaters + specks, 3))]
    )
    opacities = np.concatenate(
        [base.opacities, rng.uniform(0.7, 0.95, floaters + specks)]
    )
    cloud = GaussianCloud(positions, rotations, scales, colors, opacities)
    n0 = base_count
    return PlantedCloud(
        cloud=cloud,
        floater_indices=np.arange(n0, n0 + floaters),
        speck_indices=np.arange(n0 + floaters, n0 + floaters + specks),
    )


def artifact_removal(
    planted: PlantedCloud,
    filtered: GaussianCloud,
    index_map: IndexMap,
    visibility_eps: float = VISIBILITY_EPS,
) -> float:
    """Fraction of planted artifacts eliminated by a filtering pass.

    An artifact counts as eliminated when it was pruned outright or its
    post-filter opacity dropped below the visibility threshold.
    """
    targets = planted.planted_indices
    old_to_new = np.full(index_map.old_count, -1, dtype=np.int64)
    old_to_new[index_map.new_to_old] = np.arange(index_map.new_to_old.size)
    eliminated = 0
    for old in targets:
        new = old_to_new[old]
        if new < 0 or filtered.opacities[new] < visibility_eps:
            eliminated += 1
    return eliminated / len(targets)
