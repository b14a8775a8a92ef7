"""Pinhole cameras and orbit viewpoint generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class CameraPose:
    """Calibrated pinhole camera.

    rotation: (3, 3) orthonormal world-to-camera matrix (+z forward,
    +y down in image space); translation: (3,) such that
    x_cam = R @ x_world + T; focal in pixels; principal_point (cx, cy)
    in pixels; resolution (width, height).
    """

    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    principal_point: np.ndarray
    resolution: tuple[int, int]

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.principal_point = np.asarray(self.principal_point, dtype=np.float64).reshape(2)
        self.focal = float(self.focal)
        if self.focal <= 0:
            raise InvalidParameterError("focal length must be positive")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise InvalidParameterError("camera rotation is not orthonormal")

    @property
    def width(self) -> int:
        return int(self.resolution[0])

    @property
    def height(self) -> int:
        return int(self.resolution[1])

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def shifted(self, offset: np.ndarray) -> "CameraPose":
        """Same camera translated by a world-space offset."""
        offset = np.asarray(offset, dtype=np.float64)
        return CameraPose(
            rotation=self.rotation.copy(),
            translation=self.translation - self.rotation @ offset,
            focal=self.focal,
            principal_point=self.principal_point.copy(),
            resolution=self.resolution,
        )


@dataclass
class ViewpointSet:
    """An ordered list of poses plus the sampling spec that produced it."""

    poses: list[CameraPose]
    azimuth_count: int = 0
    elevation_deg: float = 0.0
    distances: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i: int) -> CameraPose:
        return self.poses[i]

    def grid_shape(self) -> tuple[int, int]:
        return (self.azimuth_count, len(self.distances))

    def azimuths_deg(self) -> np.ndarray:
        return np.arange(self.azimuth_count) * (360.0 / max(self.azimuth_count, 1))


def look_at_pose(
    position: np.ndarray,
    target: np.ndarray,
    focal: float,
    resolution: tuple[int, int],
    up: np.ndarray = WORLD_UP,
) -> CameraPose:
    """Camera at `position` whose optical axis passes through `target`."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    dist = np.linalg.norm(forward)
    if dist == 0:
        raise InvalidParameterError("camera position coincides with target")
    forward = forward / dist
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)

    R = np.stack([right, down, forward], axis=0)
    w, h = resolution
    return CameraPose(
        rotation=R,
        translation=-R @ position,
        focal=focal,
        principal_point=np.array([w / 2.0, h / 2.0]),
        resolution=(int(w), int(h)),
    )


def focal_from_fov(fov_deg: float, width: int) -> float:
    """Focal length in pixels from a horizontal field of view."""
    if not 0 < fov_deg < 180:
        raise InvalidParameterError("fov must be in (0, 180) degrees")
    return (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)


def make_orbit_viewpoints(
    azimuths: int,
    distances: list[float],
    elevation_deg: float = 10.0,
    resolution: int = 512,
    fov_deg: float = 60.0,
    center: np.ndarray | None = None,
) -> ViewpointSet:
    """Evenly spaced look-at cameras on orbit rings around `center`.

    Produces azimuths * len(distances) poses ordered distance-major within
    each azimuth: (az0, d0), (az0, d1), ..., (az1, d0), ... Azimuth 0 puts
    the camera on the +x axis.
    """
    if azimuths < 1:
        raise InvalidParameterError("need at least one azimuth")
    if not distances or any(d <= 0 for d in distances):
        raise InvalidParameterError("distances must be non-empty and positive")
    center = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)

    focal = focal_from_fov(fov_deg, resolution)
    el = np.radians(elevation_deg)
    poses = []
    for i in range(azimuths):
        az = 2.0 * np.pi * i / azimuths
        direction = np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )
        for d in distances:
            poses.append(
                look_at_pose(
                    position=center + d * direction,
                    target=center,
                    focal=focal,
                    resolution=(resolution, resolution),
                )
            )
    return ViewpointSet(
        poses=poses,
        azimuth_count=azimuths,
        elevation_deg=float(elevation_deg),
        distances=[float(d) for d in distances],
    )
