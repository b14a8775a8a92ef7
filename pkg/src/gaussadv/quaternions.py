"""Quaternion algebra for Gaussian orientations.

All quaternions are scalar-first ``[w, x, y, z]`` and use the Hamilton
product convention. Functions accept single quaternions of shape (4,) or
batches of shape (N, 4) where noted.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: Array) -> Array:
    """Return q scaled to unit length. Works on (4,) or (N, 4)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_mul(a: Array, b: Array) -> Array:
    """Hamilton product a ⊗ b. Inputs need not be unit quaternions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conjugate(q: Array) -> Array:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_inverse(q: Array) -> Array:
    """Multiplicative inverse; equals the conjugate for unit quaternions."""
    q = np.asarray(q, dtype=np.float64)
    n2 = np.sum(q * q, axis=-1, keepdims=True)
    if np.any(n2 == 0.0):
        raise ValueError("cannot invert a zero quaternion")
    return quat_conjugate(q) / n2


def quat_right_mul_matrix(r: Array) -> Array:
    """4x4 matrix M with q ⊗ r == M @ q for fixed r.

    Useful for differentiating expressions that are linear in q.
    """
    rw, rx, ry, rz = np.asarray(r, dtype=np.float64)
    return np.array(
        [
            [rw, -rx, -ry, -rz],
            [rx, rw, rz, -ry],
            [ry, -rz, rw, rx],
            [rz, ry, -rx, rw],
        ]
    )


def quat_to_rotmat(q: Array) -> Array:
    """Rotation matrices for unit quaternions.

    q: (N, 4) or (4,), normalized internally.
    Returns (N, 3, 3) or (3, 3).
    """
    q = quat_normalize(q)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def rotmat_backward(q: Array, g_R: Array) -> Array:
    """Pull a rotation-matrix cotangent back to raw quaternion components.

    The forward map is q -> R(q / ||q||), so the result includes the
    normalization Jacobian and is valid for non-unit q.

    q: (N, 4) raw quaternions; g_R: (N, 3, 3) cotangent of R.
    Returns (N, 4).
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    g_R = np.asarray(g_R, dtype=np.float64).reshape(q.shape[0], 3, 3)
    n = np.linalg.norm(q, axis=1, keepdims=True)
    u = q / n
    w, x, y, z = u[:, 0], u[:, 1], u[:, 2], u[:, 3]
    zero = np.zeros_like(w)

    # dR/du_i for the unit quaternion u = (w, x, y, z).
    dRw = np.stack(
        [zero, -2 * z, 2 * y, 2 * z, zero, -2 * x, -2 * y, 2 * x, zero], axis=1
    ).reshape(-1, 3, 3)
    dRx = np.stack(
        [zero, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x], axis=1
    ).reshape(-1, 3, 3)
    dRy = np.stack(
        [-4 * y, 2 * x, 2 * w, 2 * x, zero, 2 * z, -2 * w, 2 * z, -4 * y], axis=1
    ).reshape(-1, 3, 3)
    dRz = np.stack(
        [-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, zero], axis=1
    ).reshape(-1, 3, 3)

    g_u = np.stack(
        [
            np.sum(g_R * dRw, axis=(1, 2)),
            np.sum(g_R * dRx, axis=(1, 2)),
            np.sum(g_R * dRy, axis=(1, 2)),
            np.sum(g_R * dRz, axis=(1, 2)),
        ],
        axis=1,
    )
    # Normalization backward: du/dq = (I - u u^T) / ||q||.
    g_q = (g_u - u * np.sum(g_u * u, axis=1, keepdims=True)) / n
    return g_q
