"""Compiled splatting kernels.

Both kernels walk the Gaussians in the caller-supplied (depth-sorted)
array order with a per-pixel transmittance buffer, so every pixel
composites front-to-back in exactly the same sequence. Accumulation order
is fixed and single-threaded: output is bit-deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def rasterize_forward(
    u, v, qxx, qxy, qyy, opac, colors, tz,
    x0, x1, y0, y1, valid,
    H, W, bg, rho_max, w_max, stop_t,
):
    """Composite sorted Gaussians; returns (rgb, T_final, w_acc, d_acc)."""
    acc = np.zeros((H, W, 3))
    Tb = np.ones((H, W))
    wacc = np.zeros((H, W))
    dacc = np.zeros((H, W))
    n = u.shape[0]
    for g in range(n):
        if not valid[g]:
            continue
        og = opac[g]
        for py in range(y0[g], y1[g]):
            dy = (py + 0.5) - v[g]
            for px in range(x0[g], x1[g]):
                T = Tb[py, px]
                if T < stop_t:
                    continue
                dx = (px + 0.5) - u[g]
                rho = qxx[g] * dx * dx + 2.0 * qxy[g] * dx * dy + qyy[g] * dy * dy
                if rho > rho_max:
                    continue
                w = og * np.exp(-0.5 * rho)
                if w > w_max:
                    w = w_max
                wt = w * T
                acc[py, px, 0] += wt * colors[g, 0]
                acc[py, px, 1] += wt * colors[g, 1]
                acc[py, px, 2] += wt * colors[g, 2]
                wacc[py, px] += wt
                dacc[py, px] += wt * tz[g]
                Tb[py, px] = T * (1.0 - w)
    rgb = np.empty((H, W, 3))
    for py in range(H):
        for px in range(W):
            t = Tb[py, px]
            rgb[py, px, 0] = acc[py, px, 0] + t * bg[0]
            rgb[py, px, 1] = acc[py, px, 1] + t * bg[1]
            rgb[py, px, 2] = acc[py, px, 2] + t * bg[2]
    return rgb, Tb, wacc, dacc


@njit(cache=True, fastmath=True)
def rasterize_backward(
    u, v, qxx, qxy, qyy, opac, colors, tz,
    x0, x1, y0, y1, valid,
    rgb_out, grad_rgb,
    H, W, rho_max, w_max, stop_t,
):
    """Screen-space gradients for the forward pass above.

    Walks the identical sequence of (gaussian, pixel) updates. For each
    contribution the partial of the composited color w.r.t. the blend
    weight is T*c - S/(1-w), where S is the color still owed by everything
    behind (recovered as rgb_out minus the running front prefix).

    Returns (g_color (n,3), g_opac, g_u, g_v, g_cxx, g_cxy, g_cyy) where
    the g_c* entries are cotangents of the 2D covariance (g_cxy is the
    per-off-diagonal-entry value).
    """
    n = u.shape[0]
    P = np.zeros((H, W, 3))
    Tb = np.ones((H, W))
    g_col = np.zeros((n, 3))
    g_op = np.zeros(n)
    g_u = np.zeros(n)
    g_v = np.zeros(n)
    g_cxx = np.zeros(n)
    g_cxy = np.zeros(n)
    g_cyy = np.zeros(n)
    for g in range(n):
        if not valid[g]:
            continue
        og = opac[g]
        for py in range(y0[g], y1[g]):
            dy = (py + 0.5) - v[g]
            for px in range(x0[g], x1[g]):
                T = Tb[py, px]
                if T < stop_t:
                    continue
                dx = (px + 0.5) - u[g]
                rho = qxx[g] * dx * dx + 2.0 * qxy[g] * dx * dy + qyy[g] * dy * dy
                if rho > rho_max:
                    continue
                e = np.exp(-0.5 * rho)
                w = og * e
                clamped = w > w_max
                if clamped:
                    w = w_max
                wt = w * T
                gw = 0.0
                for c in range(3):
                    gc = grad_rgb[py, px, c]
                    g_col[g, c] += gc * wt
                    P[py, px, c] += wt * colors[g, c]
                    suffix = rgb_out[py, px, c] - P[py, px, c]
                    gw += gc * (T * colors[g, c] - suffix / (1.0 - w))
                if not clamped:
                    g_op[g] += gw * e
                    grho = -0.5 * w * gw
                    qdx = qxx[g] * dx + qxy[g] * dy
                    qdy = qxy[g] * dx + qyy[g] * dy
                    g_u[g] += grho * (-2.0 * qdx)
                    g_v[g] += grho * (-2.0 * qdy)
                    g_cxx[g] -= grho * qdx * qdx
                    g_cxy[g] -= grho * qdx * qdy
                    g_cyy[g] -= grho * qdy * qdy
                Tb[py, px] = T * (1.0 - w)
    return g_col, g_op, g_u, g_v, g_cxx, g_cxy, g_cyy
