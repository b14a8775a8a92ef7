import numpy as np
import pytest

from gaussadv.cloud import GaussianCloud
from gaussadv.cameras import make_orbit_viewpoints
from gaussadv.quaternions import quat_normalize


def random_cloud(rng: np.random.Generator, n: int) -> GaussianCloud:
    """A well-conditioned random cloud for renderer and I/O tests."""
    return GaussianCloud(
        positions=rng.uniform(-0.5, 0.5, (n, 3)),
        rotations=quat_normalize(rng.normal(size=(n, 4))),
        scales=rng.uniform(0.03, 0.3, (n, 3)),
        colors=rng.uniform(0.05, 0.95, (n, 3)),
        opacities=rng.uniform(0.15, 0.95, n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cloud(rng):
    return random_cloud(rng, 8)


@pytest.fixture
def single_view():
    return make_orbit_viewpoints(1, [4.0], elevation_deg=12.0, resolution=64, fov_deg=60.0)


@pytest.fixture
def orbit_views():
    return make_orbit_viewpoints(4, [3.0, 6.0], elevation_deg=10.0, resolution=64, fov_deg=60.0)
