"""Differentiable forward splatting.

Each Gaussian is projected through the pinhole camera; its 3D covariance
R_q diag(s^2) R_q^T is pushed to screen space with the local affine
Jacobian of the projection, and pixels composite front-to-back with a
transmittance product. The backward pass is hand-derived reverse mode:
screen-space gradients come from the compiled kernel and are pulled back
through the covariance construction, projection, and the quaternion-to-
rotation map in closed form, yielding d(loss)/d(all 14 parameters per
Gaussian).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._raster import rasterize_backward, rasterize_forward
from .cameras import CameraPose, ViewpointSet
from .cloud import GaussianCloud
from .errors import DegenerateCovarianceError, InvalidParameterError
from .quaternions import quat_to_rotmat, rotmat_backward

DET_FLOOR = 1e-12


@dataclass
class RenderSettings:
    """Rasterization knobs shared by forward and backward passes.

    rho_max bounds the squared Mahalanobis footprint radius; beyond it a
    Gaussian contributes exactly zero in both passes. The default of 50
    (about 7 sigma, truncated weight < 2e-11) keeps the truncation far
    below finite-difference resolution.
    """

    background: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    near: float = 0.05
    far: float = 12.0
    cov_reg: float = 0.3
    rho_max: float = 50.0
    w_max: float = 1.0 - 1e-6
    stop_transmittance: float = 1e-12

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)


@dataclass
class RenderedView:
    """rgb: (H, W, 3) in [0,1]; alpha: (H, W) coverage; depth: (H, W)
    alpha-weighted mean camera-space depth (far-plane constant where
    nothing was hit). all_culled flags an entirely empty render."""

    rgb: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    all_culled: bool = False


@dataclass
class ParamGradients:
    """(N, 14) partials in [px py pz qw qx qy qz sx sy sz cr cg cb a] order."""

    values: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return self.values[:, 0:3]

    @property
    def rotations(self) -> np.ndarray:
        return self.values[:, 3:7]

    @property
    def scales(self) -> np.ndarray:
        return self.values[:, 7:10]

    @property
    def colors(self) -> np.ndarray:
        return self.values[:, 10:13]

    @property
    def opacities(self) -> np.ndarray:
        return self.values[:, 13]


class _Projection:
    """Per-view screen-space quantities, depth-sorted."""

    __slots__ = (
        "order", "valid", "t_cam", "u", "v", "J", "sigma_cam", "sigma2d",
        "qxx", "qxy", "qyy", "x0", "x1", "y0", "y1", "rot_mats", "any_valid",
    )


def _project(cloud: GaussianCloud, pose: CameraPose, settings: RenderSettings) -> _Projection:
    R = pose.rotation
    f = pose.focal
    cx, cy = pose.principal_point
    W, H = pose.width, pose.height

    t = cloud.positions @ R.T + pose.translation
    tz = t[:, 2]
    valid = tz > settings.near
    tzs = np.where(valid, tz, 1.0)

    u = f * t[:, 0] / tzs + cx
    v = f * t[:, 1] / tzs + cy

    rot_mats = quat_to_rotmat(cloud.rotations)
    M = rot_mats * cloud.scales[:, None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        sigma_world = M @ M.transpose(0, 2, 1)
    sigma_cam = np.einsum("ab,nbc,dc->nad", R, sigma_world, R, optimize=True)

    n = cloud.count
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = f / tzs
    J[:, 0, 2] = -f * t[:, 0] / tzs**2
    J[:, 1, 1] = f / tzs
    J[:, 1, 2] = -f * t[:, 1] / tzs**2

    sigma2d = np.einsum("nab,nbc,ndc->nad", J, sigma_cam, J, optimize=True)
    sigma2d[:, 0, 0] += settings.cov_reg
    sigma2d[:, 1, 1] += settings.cov_reg

    a = sigma2d[:, 0, 0]
    b = sigma2d[:, 0, 1]
    c = sigma2d[:, 1, 1]
    det = a * c - b * b
    if np.any(valid & ~np.isfinite(det)):
        raise DegenerateCovarianceError("non-finite 2D covariance")
    if np.any(valid & (det < DET_FLOOR)):
        raise DegenerateCovarianceError(
            f"2D covariance determinant below {DET_FLOOR}"
        )
    dets = np.where(valid, det, 1.0)
    qxx = c / dets
    qxy = -b / dets
    qyy = a / dets

    eig_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    radius = np.sqrt(settings.rho_max * np.where(valid, eig_max, 0.0))
    x0 = np.clip(np.floor(u - radius), 0, W).astype(np.int64)
    x1 = np.clip(np.ceil(u + radius) + 1, 0, W).astype(np.int64)
    y0 = np.clip(np.floor(v - radius), 0, H).astype(np.int64)
    y1 = np.clip(np.ceil(v + radius) + 1, 0, H).astype(np.int64)
    valid = valid & (x0 < x1) & (y0 < y1)

    # Front-to-back order: camera-space depth, ties broken by index.
    order = np.argsort(tz, kind="stable")

    proj = _Projection()
    proj.order = order
    proj.valid = valid
    proj.t_cam = t
    proj.u = u
    proj.v = v
    proj.J = J
    proj.sigma_cam = sigma_cam
    proj.sigma2d = sigma2d
    proj.qxx = qxx
    proj.qxy = qxy
    proj.qyy = qyy
    proj.x0 = x0
    proj.x1 = x1
    proj.y0 = y0
    proj.y1 = y1
    proj.rot_mats = rot_mats
    proj.any_valid = bool(np.any(valid))
    return proj


def render(
    cloud: GaussianCloud,
    pose: CameraPose,
    settings: RenderSettings | None = None,
) -> RenderedView:
    """Rasterize one view. Deterministic for fixed inputs."""
    settings = settings or RenderSettings()
    W, H = pose.width, pose.height
    if cloud.count == 0:
        rgb = np.tile(settings.background, (H, W, 1))
        return RenderedView(
            rgb=rgb,
            alpha=np.zeros((H, W)),
            depth=np.full((H, W), settings.far),
            all_culled=True,
        )
    p = _project(cloud, pose, settings)
    o = p.order
    rgb, t_final, wacc, dacc = rasterize_forward(
        p.u[o], p.v[o], p.qxx[o], p.qxy[o], p.qyy[o],
        cloud.opacities[o], cloud.colors[o], p.t_cam[o, 2],
        p.x0[o], p.x1[o], p.y0[o], p.y1[o], p.valid[o],
        H, W, settings.background, settings.rho_max, settings.w_max,
        settings.stop_transmittance,
    )
    alpha = np.clip(1.0 - t_final, 0.0, 1.0)
    covered = wacc > 0.0
    depth = np.full((H, W), settings.far)
    depth[covered] = dacc[covered] / wacc[covered]
    return RenderedView(rgb=rgb, alpha=alpha, depth=depth, all_culled=not p.any_valid)


def render_with_grad(
    cloud: GaussianCloud,
    pose: CameraPose,
    upstream: np.ndarray,
    settings: RenderSettings | None = None,
    forward_view: RenderedView | None = None,
) -> ParamGradients:
    """Pull an image-space cotangent back to all 14 parameters per Gaussian.

    upstream: (H, W, 3) d(loss)/d(rgb). Pass forward_view to reuse an
    existing render of the same (cloud, pose, settings).
    """
    settings = settings or RenderSettings()
    W, H = pose.width, pose.height
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != (H, W, 3):
        raise InvalidParameterError(
            f"upstream shape {upstream.shape} does not match {(H, W, 3)}"
        )
    if not np.all(np.isfinite(upstream)):
        raise InvalidParameterError("upstream gradient contains non-finite values")
    n = cloud.count
    if n == 0:
        return ParamGradients(np.zeros((0, 14)))
    if forward_view is None:
        forward_view = render(cloud, pose, settings)

    p = _project(cloud, pose, settings)
    o = p.order
    g_col_s, g_op_s, g_u_s, g_v_s, g_cxx_s, g_cxy_s, g_cyy_s = rasterize_backward(
        p.u[o], p.v[o], p.qxx[o], p.qxy[o], p.qyy[o],
        cloud.opacities[o], cloud.colors[o], p.t_cam[o, 2],
        p.x0[o], p.x1[o], p.y0[o], p.y1[o], p.valid[o],
        np.ascontiguousarray(forward_view.rgb), upstream,
        H, W, settings.rho_max, settings.w_max, settings.stop_transmittance,
    )
    inv = np.empty_like(o)
    inv[o] = np.arange(n)
    g_col = g_col_s[inv]
    g_op = g_op_s[inv]
    g_uv = np.stack([g_u_s[inv], g_v_s[inv]], axis=1)
    g_s2d = np.empty((n, 2, 2))
    g_s2d[:, 0, 0] = g_cxx_s[inv]
    g_s2d[:, 0, 1] = g_cxy_s[inv]
    g_s2d[:, 1, 0] = g_cxy_s[inv]
    g_s2d[:, 1, 1] = g_cyy_s[inv]

    # Screen space back to camera space.
    J = p.J
    g_sigma_cam = np.einsum("nba,nbc,ncd->nad", J, g_s2d, J, optimize=True)
    g_J = np.einsum(
        "nab,nbc,ncd->nad", g_s2d + g_s2d.transpose(0, 2, 1), J, p.sigma_cam,
        optimize=True,
    )
    g_t = np.einsum("nba,nb->na", J, g_uv)

    f = pose.focal
    t = p.t_cam
    tz = np.where(p.t_cam[:, 2] > settings.near, p.t_cam[:, 2], 1.0)
    inv_z2 = 1.0 / tz**2
    g_t[:, 0] += g_J[:, 0, 2] * (-f * inv_z2)
    g_t[:, 1] += g_J[:, 1, 2] * (-f * inv_z2)
    g_t[:, 2] += (g_J[:, 0, 0] + g_J[:, 1, 1]) * (-f * inv_z2) + (
        g_J[:, 0, 2] * t[:, 0] + g_J[:, 1, 2] * t[:, 1]
    ) * (2.0 * f * inv_z2 / tz)

    # Camera space back to world parameters.
    R = pose.rotation
    g_pos = g_t @ R
    g_sigma_world = np.einsum("ba,nbc,cd->nad", R, g_sigma_cam, R, optimize=True)

    M = p.rot_mats * cloud.scales[:, None, :]
    g_M = np.einsum(
        "nab,nbc->nac", g_sigma_world + g_sigma_world.transpose(0, 2, 1), M,
        optimize=True,
    )
    g_rot_mats = g_M * cloud.scales[:, None, :]
    g_scales = np.einsum("nij,nij->nj", g_M, p.rot_mats)
    g_quat = rotmat_backward(cloud.rotations, g_rot_mats)

    values = np.concatenate(
        [g_pos, g_quat, g_scales, g_col, g_op[:, None]], axis=1
    )
    values[~p.valid] = 0.0
    return ParamGradients(values)


def render_batch(
    cloud: GaussianCloud,
    views: ViewpointSet,
    settings: RenderSettings | None = None,
) -> list[RenderedView]:
    """Element-wise render; output order matches the viewpoint order."""
    settings = settings or RenderSettings()
    return [render(cloud, pose, settings) for pose in views]
