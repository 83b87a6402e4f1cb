"""Small vectorised SO(3) helpers: Rodrigues exp/log, vector-to-vector
rotations and geodesic means.

All functions accept stacked inputs with arbitrary leading dimensions.
"""

import numpy as np

_EPS = 1e-15


def skew(w):
    """Cross-product matrix of ``w`` (..., 3) -> (..., 3, 3)."""
    w = np.asarray(w, dtype=float)
    z = np.zeros(w.shape[:-1])
    return np.stack(
        [
            np.stack([z, -w[..., 2], w[..., 1]], axis=-1),
            np.stack([w[..., 2], z, -w[..., 0]], axis=-1),
            np.stack([-w[..., 1], w[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def exp_so3(w):
    """Rotation matrices from rotation vectors (angle times unit axis)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    K = skew(w)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def log_so3(R):
    """Rotation vectors of rotation matrices (principal branch, angle <= pi)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    cos_t = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    v = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    sin_t = np.sin(theta)
    small = theta < 1e-8
    near_pi = theta > np.pi - 1e-6
    scale = np.where(small, 0.5 + theta**2 / 12.0, theta / (2.0 * np.where(small, 1.0, sin_t)))
    w = scale[..., None] * v
    if np.any(near_pi):
        # axis from the symmetric part when sin(theta) vanishes
        flat_w = w.reshape(-1, 3)
        flat_R = R.reshape(-1, 3, 3)
        flat_v = v.reshape(-1, 3)
        flat_t = theta.reshape(-1)
        for k in np.flatnonzero(near_pi):
            B = (flat_R[k] + np.eye(3)) / 2.0
            col = int(np.argmax(np.diag(B)))
            axis = B[:, col] / np.sqrt(max(B[col, col], _EPS))
            if np.dot(axis, flat_v[k]) < 0:
                axis = -axis
            flat_w[k] = flat_t[k] * axis
        w = flat_w.reshape(w.shape)
    return w


def rotation_between(a, b):
    """Rotation vectors taking unit vectors ``a`` onto unit vectors ``b``.

    Uses the axis ``a x b`` and the angle between them; parallel inputs give
    the zero vector. Antiparallel inputs pick an arbitrary perpendicular axis.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.cross(a, b)
    s = np.linalg.norm(c, axis=-1)
    d = np.sum(a * b, axis=-1)
    theta = np.arctan2(s, d)
    ok = s > _EPS
    axis = np.where(ok[..., None], c / np.where(ok, s, 1.0)[..., None], 0.0)
    w = theta[..., None] * axis
    anti = (~ok) & (d < 0)
    if np.any(anti):
        flat_w = w.reshape(-1, 3)
        flat_a = np.broadcast_to(a, w.shape).reshape(-1, 3)
        for k in np.flatnonzero(anti):
            ak = flat_a[k]
            perp = np.cross(ak, np.eye(3)[int(np.argmin(np.abs(ak)))])
            flat_w[k] = np.pi * perp / np.linalg.norm(perp)
        w = flat_w.reshape(w.shape)
    return w


def geodesic_midpoint(R1, R2):
    """Riemannian mean of two rotations: ``R1 exp(log(R1^T R2) / 2)``."""
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    rel = np.swapaxes(R1, -1, -2) @ R2
    return R1 @ exp_so3(0.5 * log_so3(rel))


def karcher_mean(Rs, iters=20, tol=1e-14):
    """Riemannian (Karcher) mean of rotations stacked along axis 0.

    ``Rs`` has shape (n, ..., 3, 3); returns shape (..., 3, 3).
    """
    Rs = np.asarray(Rs, dtype=float)
    if Rs.shape[0] == 1:
        return Rs[0].copy()
    if Rs.shape[0] == 2:
        return geodesic_midpoint(Rs[0], Rs[1])
    M = Rs[0].copy()
    for _ in range(iters):
        Mt = np.swapaxes(M, -1, -2)
        step = np.mean(log_so3(Mt[None] @ Rs), axis=0)
        M = M @ exp_so3(step)
        if np.max(np.linalg.norm(step, axis=-1)) < tol:
            break
    return M
