"""Gaussian primitives, clouds, and procedural asset generation.

Each primitive carries 14 scalars: position (3), rotation quaternion (4,
scalar-first), per-axis scale standard deviations (3), RGB color (3) and
opacity (1). Clouds store these as contiguous arrays; the per-primitive
index is stable, so index j refers to the same primitive before and after
an optimization run. Pruning produces a new cloud plus an IndexMap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, UnknownShapeError
from .quaternions import quat_normalize

# Canonical slot order of the 14-parameter layout.
PARAM_SLOTS = (
    "px", "py", "pz",
    "qw", "qx", "qy", "qz",
    "sx", "sy", "sz",
    "cr", "cg", "cb",
    "a",
)

MIN_SCALE = 1e-4


@dataclass(frozen=True)
class Gaussian:
    """A single primitive; a convenience view, not the storage format."""

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    color: np.ndarray
    opacity: float


@dataclass
class GaussianCloud:
    """Structure-of-arrays container for N Gaussians.

    positions: (N, 3) meters; rotations: (N, 4) unit, scalar-first;
    scales: (N, 3) strictly positive std-devs; colors: (N, 3) in [0, 1];
    opacities: (N,) in [0, 1].
    """

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64)
        n = self.positions.shape[0]
        shapes = (
            self.positions.shape == (n, 3)
            and self.rotations.shape == (n, 4)
            and self.scales.shape == (n, 3)
            and self.colors.shape == (n, 3)
            and self.opacities.shape == (n,)
        )
        if not shapes:
            raise InvalidParameterError("inconsistent cloud array shapes")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.count

    def gaussian(self, j: int) -> Gaussian:
        return Gaussian(
            position=self.positions[j].copy(),
            rotation=self.rotations[j].copy(),
            scale=self.scales[j].copy(),
            color=self.colors[j].copy(),
            opacity=float(self.opacities[j]),
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(),
            self.rotations.copy(),
            self.scales.copy(),
            self.colors.copy(),
            self.opacities.copy(),
        )

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def validate(self, atol: float = 1e-6) -> None:
        """Raise if any type invariant is violated."""
        if not np.all(np.isfinite(self.positions)):
            raise InvalidParameterError("non-finite position")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > atol):
            raise InvalidParameterError("rotation quaternion not unit length")
        if np.any(self.scales <= 0.0):
            raise InvalidParameterError("scale must be strictly positive")
        if np.any(self.colors < 0.0) or np.any(self.colors > 1.0):
            raise InvalidParameterError("color outside [0, 1]")
        if np.any(self.opacities < 0.0) or np.any(self.opacities > 1.0):
            raise InvalidParameterError("opacity outside [0, 1]")

    def as_params(self) -> np.ndarray:
        """(N, 14) parameter matrix in PARAM_SLOTS order."""
        return np.concatenate(
            [
                self.positions,
                self.rotations,
                self.scales,
                self.colors,
                self.opacities[:, None],
            ],
            axis=1,
        )

    @staticmethod
    def from_params(params: np.ndarray) -> "GaussianCloud":
        params = np.asarray(params, dtype=np.float64)
        return GaussianCloud(
            positions=params[:, 0:3],
            rotations=params[:, 3:7],
            scales=params[:, 7:10],
            colors=params[:, 10:13],
            opacities=params[:, 13],
        )


@dataclass
class IndexMap:
    """Tracks surviving primitives across a pruning pass.

    new_to_old[i] is the index in the pre-prune cloud of the primitive now
    stored at index i.
    """

    old_count: int
    new_to_old: np.ndarray

    def __post_init__(self):
        self.new_to_old = np.asarray(self.new_to_old, dtype=np.int64)

    @staticmethod
    def identity(n: int) -> "IndexMap":
        return IndexMap(old_count=n, new_to_old=np.arange(n, dtype=np.int64))

    def old_index(self, new: int) -> int:
        return int(self.new_to_old[new])

    @property
    def removed_indices(self) -> np.ndarray:
        keep = np.zeros(self.old_count, dtype=bool)
        keep[self.new_to_old] = True
        return np.flatnonzero(~keep)


def _normalize_extent(positions: np.ndarray, diagonal: float = 2.0) -> np.ndarray:
    """Recenter on the centroid and scale the bounding box diagonal."""
    positions = positions - positions.mean(axis=0)
    extent = positions.max(axis=0) - positions.min(axis=0)
    d = float(np.linalg.norm(extent))
    if d > 0:
        positions = positions * (diagonal / d)
    return positions


def _quat_from_z_to(normal: np.ndarray) -> np.ndarray:
    """Unit quaternion rotating +z onto the given direction."""
    z = np.array([0.0, 0.0, 1.0])
    n = normal / np.linalg.norm(normal)
    c = float(np.dot(z, n))
    if c > 1.0 - 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    if c < -1.0 + 1e-12:
        return np.array([0.0, 1.0, 0.0, 0.0])  # 180° about x
    axis = np.cross(z, n)
    axis /= np.linalg.norm(axis)
    half = 0.5 * np.arccos(c)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def _box_shell(rng: np.random.Generator, n: int, size: np.ndarray):
    """Sample points + outward normals on an axis-aligned box surface."""
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    for f in range(6):
        m = faces == f
        axis, sign = divmod(f, 2)
        sign = 1.0 if sign == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[m, axis] = sign * 0.5 * size[axis]
        pts[m, others[0]] = uv[m, 0] * size[others[0]]
        pts[m, others[1]] = uv[m, 1] * size[others[1]]
        nrm[m, axis] = sign
    return pts, nrm


def _sphere_points(rng: np.random.Generator, n: int, radius: float):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v, v


def make_synthetic_cloud(shape: str, count: int, seed: int) -> GaussianCloud:
    """Procedurally generate a test asset.

    Shapes: "box-car" (box body + cabin + four wheel lobes), "sphere",
    "plane". Output is deterministic for a given (shape, count, seed),
    recentered on the origin, and normalized to a 2 m bounding-box
    diagonal. Surface primitives are oriented flat against the local
    surface (small scale along the normal).
    """
    if count < 1:
        raise InvalidParameterError("count must be >= 1")
    rng = np.random.default_rng(seed)

    if shape == "sphere":
        if count == 1:
            return GaussianCloud(
                positions=np.zeros((1, 3)),
                rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
                scales=np.full((1, 3), 0.1),
                colors=np.full((1, 3), 0.6),
                opacities=np.array([0.9]),
            )
        pts, nrm = _sphere_points(rng, count, radius=1.0)
        base = np.array([0.75, 0.3, 0.25]) + 0.2 * rng.uniform(-1, 1, 3)
        colors = np.clip(base + 0.05 * rng.normal(size=(count, 3)), 0.0, 1.0)
        tangent = 1.3 / np.sqrt(count)
    elif shape == "plane":
        side = np.sqrt(count)
        pts = np.zeros((count, 3))
        pts[:, :2] = rng.uniform(-1.0, 1.0, size=(count, 2))
        nrm = np.tile(np.array([0.0, 0.0, 1.0]), (count, 1))
        colors = np.clip(
            0.5 + 0.25 * np.sin(4.0 * pts[:, :1]) + 0.05 * rng.normal(size=(count, 3)),
            0.0,
            1.0,
        )
        tangent = 2.4 / max(side, 1.0)
    elif shape == "box-car":
        # Budget: body shell, cabin shell, four wheel lobes.
        n_body = max(1, int(round(count * 0.55)))
        n_cabin = max(0, int(round(count * 0.25)))
        n_wheel = count - n_body - n_cabin
        body_size = np.array([1.8, 0.85, 0.55])
        cabin_size = np.array([0.95, 0.8, 0.45])

        pts_b, nrm_b = _box_shell(rng, n_body, body_size)
        pts_c, nrm_c = _box_shell(rng, max(n_cabin, 1), cabin_size)
        pts_c = pts_c[:n_cabin] + np.array([-0.1, 0.0, 0.5])
        nrm_c = nrm_c[:n_cabin]

        wheel_centers = np.array(
            [
                [0.62, 0.45, -0.28],
                [0.62, -0.45, -0.28],
                [-0.62, 0.45, -0.28],
                [-0.62, -0.45, -0.28],
            ]
        )
        n_w = max(n_wheel, 0)
        pts_w = np.zeros((n_w, 3))
        nrm_w = np.tile(np.array([0.0, 0.0, 1.0]), (n_w, 1))
        if n_w:
            which = rng.integers(0, 4, size=n_w)
            sp, sn = _sphere_points(rng, n_w, radius=0.16)
            sp[:, 1] *= 0.45  # squash into a wheel lobe
            pts_w = wheel_centers[which] + sp
            nrm_w = sn

        pts = np.concatenate([pts_b, pts_c, pts_w], axis=0)
        nrm = np.concatenate([nrm_b, nrm_c, nrm_w], axis=0)

        body_color = np.clip(np.array([0.7, 0.15, 0.12]) + 0.25 * rng.uniform(-1, 1, 3), 0.05, 0.95)
        colors = np.tile(body_color, (count, 1))
        colors[n_body : n_body + n_cabin] = np.clip(body_color * 0.6 + 0.25, 0, 1)
        colors[n_body + n_cabin :] = 0.08  # dark wheels
        colors = np.clip(colors + 0.03 * rng.normal(size=(count, 3)), 0.0, 1.0)
        tangent = 1.5 / np.sqrt(count)
    else:
        raise UnknownShapeError(f"unknown shape {shape!r}")

    pts = pts + 0.003 * rng.normal(size=pts.shape)
    pts = _normalize_extent(pts, diagonal=2.0)

    rotations = np.stack([_quat_from_z_to(v) for v in nrm])
    rotations = quat_normalize(rotations)

    scales = np.empty((count, 3))
    scales[:, 0] = tangent * rng.uniform(0.7, 1.3, size=count)
    scales[:, 1] = tangent * rng.uniform(0.7, 1.3, size=count)
    scales[:, 2] = 0.25 * tangent  # thin along the surface normal
    scales = np.maximum(scales, MIN_SCALE)

    opacities = rng.uniform(0.75, 0.95, size=count)

    cloud = GaussianCloud(
        positions=pts,
        rotations=rotations,
        scales=scales,
        colors=colors,
        opacities=opacities,
    )
    cloud.validate()
    return cloud
