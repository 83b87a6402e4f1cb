"""Directional derivatives of the principal director and distortion indices.

For each grid axis the central difference of ``u1`` is a rotation taking
the mean of the two neighbours onto the forward neighbour. Derivatives
along the frame axes are assembled from those three rotations, projected
onto the frame to give the connection scalars ``c_1jk = u_j . du1/du_k``,
and combined into splay, bend, twist and total distortion.

Two assembly schemes are available:

``"limit"`` (default)
    The small-step limit of transporting ``u1`` by the axis rotations:
    ``du1/dv = (sum_j v_j w_j) x u1`` with ``w_j`` the rotation vectors.
    Linear in the direction ``v``, so helical fields give identical values
    in any grid orientation.
``"transport"``
    Transport by weighted sums of the rotated directors, normalised, with
    the forward/backward difference halved. Agrees with ``"limit"`` along
    grid axes up to ``sin(angle)`` versus ``angle``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .director import ScaledRotation
from .frames import ABSENT, FULL, FrameField
from .rotations import exp_so3, karcher_mean, log_so3, rotation_between

VALID = 1
DEGRADED = 2
SCHEMES = ("limit", "transport")


@dataclass(frozen=True)
class DistortionIndices:
    splay: float
    bend: float
    twist: float
    total: float
    valid: bool = True


@dataclass
class DistortionMaps:
    splay: np.ndarray
    bend: np.ndarray
    twist: np.ndarray
    total: np.ndarray
    mask: np.ndarray  # bit 0 valid, bit 1 degraded

    @property
    def valid(self):
        return (self.mask & VALID).astype(bool)

    def as_dict(self):
        return {"splay": self.splay, "bend": self.bend, "twist": self.twist, "total": self.total}


def _clamped_shift(a, axis, step):
    """``out[x] = a[x + step * e_axis]`` with replicate boundary."""
    n = a.shape[axis]
    idx = np.clip(np.arange(n) + step, 0, n - 1)
    return np.take(a, idx, axis=axis)


def _axis_rotation_vectors(u1, present, axis, step):
    """Rotation vectors from the neighbour mean to the forward neighbour.

    Returns ``(w, degraded, undefined)``. Volume edges replicate the edge
    voxel. A neighbour without a frame is replaced by the centre director
    (a one-sided difference); when both are missing the axis contributes
    the identity rotation.
    """
    fwd = _clamped_shift(u1, axis, step)
    bwd = _clamped_shift(u1, axis, -step)
    pf = _clamped_shift(present, axis, step)
    pb = _clamped_shift(present, axis, -step)
    fwd = np.where(pf[..., None], fwd, u1)
    bwd = np.where(pb[..., None], bwd, u1)
    sign = np.where(np.einsum("...i,...i->...", fwd, bwd) >= 0, 1.0, -1.0)
    mid = fwd + sign[..., None] * bwd
    nrm = np.linalg.norm(mid, axis=-1, keepdims=True)
    mid = mid / np.where(nrm > 0, nrm, 1.0)
    w = rotation_between(mid, fwd)
    undefined = ~pf & ~pb
    w[undefined] = 0.0
    degraded = (~pf | ~pb) & present
    return w, degraded, undefined


def rotation_vectors(frames: FrameField, spacing_normalize=False, window=None):
    """Per-voxel rotation vectors ``w[..., j, :]`` of the central differences.

    With ``spacing_normalize`` the angles are divided by the grid spacing
    (radians per mm). ``window`` (mm) averages the rotations of several
    step sizes, each rescaled to the window, by their Riemannian mean and
    implies spacing normalisation.
    """
    u1 = frames.u1
    present = frames.state != ABSENT
    W = np.zeros(u1.shape[:3] + (3, 3))
    degraded = np.zeros(u1.shape[:3], dtype=bool)
    for j in range(3):
        h = frames.spacing[j]
        if window is None:
            w, deg, _ = _axis_rotation_vectors(u1, present, j, 1)
            if spacing_normalize:
                w = w / h
        else:
            if window <= 0:
                raise ValueError("window must be positive")
            n = max(1, int(round(window / h)))
            rots = []
            deg = np.zeros_like(degraded)
            for s in range(1, n + 1):
                w, d, _ = _axis_rotation_vectors(u1, present, j, s)
                rots.append(exp_so3(w * (n / s)))
                deg |= d
            w = log_so3(karcher_mean(np.stack(rots))) / (n * h)
        W[..., j, :] = w
        degraded |= deg
    return W, degraded


def _derivatives(frames: FrameField, W, scheme):
    """``D[..., k, :] = du1/du_k`` for k = 1..3."""
    u = frames.u
    u1 = u[..., 0, :]
    if scheme == "limit":
        omega = np.einsum("...kj,...jc->...kc", u, W)
        return np.cross(omega, u1[..., None, :])
    if scheme == "transport":
        R = exp_so3(W)
        fwd = np.einsum("...jab,...b->...ja", R, u1)
        back = np.einsum("...jba,...b->...ja", R, u1)
        D = np.empty_like(u)
        with np.errstate(invalid="ignore", divide="ignore"):
            for k in range(3):
                c = u[..., k, :]
                pos = (c >= 0)[..., None]
                a = np.abs(c)[..., None]
                p = np.sum(a * np.where(pos, fwd, back), axis=-2)
                q = np.sum(a * np.where(pos, back, fwd), axis=-2)
                p /= np.linalg.norm(p, axis=-1, keepdims=True)
                q /= np.linalg.norm(q, axis=-1, keepdims=True)
                minus = p - q
                plus = p + q
                use_minus = np.linalg.norm(minus, axis=-1) <= np.linalg.norm(plus, axis=-1)
                D[..., k, :] = np.where(use_minus[..., None], minus, plus) / 2.0
        return D
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _connections(frames, D):
    # C[..., j, k] = u_j . du1/du_k for j in {2, 3}
    return np.einsum("...jc,...kc->...jk", frames.u[..., 1:, :], D)


def _compute(frames, scheme, spacing_normalize, window):
    W, degraded = rotation_vectors(frames, spacing_normalize, window)
    full = frames.state == FULL
    D = _derivatives(frames, W, scheme)
    D[~full] = 0.0
    return W, D, degraded, full


def distortion_maps(frames: FrameField, scheme="limit", spacing_normalize=False, window=None):
    """Splay, bend, twist and total distortion volumes plus a status mask.

    Voxels without a full frame are 0 with the valid bit cleared; voxels
    where a neighbouring director was missing carry the degraded bit.
    """
    _, D, degraded, full = _compute(frames, scheme, spacing_normalize, window)
    C = _connections(frames, D)
    splay = np.sqrt(C[..., 0, 1] ** 2 + C[..., 1, 2] ** 2)
    bend = np.sqrt(C[..., 0, 0] ** 2 + C[..., 1, 0] ** 2)
    twist = np.sqrt(C[..., 0, 2] ** 2 + C[..., 1, 1] ** 2)
    total = np.sqrt(splay**2 + bend**2 + twist**2)
    zero = ~full
    for m in (splay, bend, twist, total):
        m[zero] = 0.0
    mask = (full * VALID | (degraded & full) * DEGRADED).astype(np.uint8)
    return DistortionMaps(splay, bend, twist, total, mask)


def _check_voxel(frames, x, need_full=True):
    x = tuple(int(i) for i in x)
    state = frames.state[x]
    if state == ABSENT:
        raise ValueError(f"no frame at voxel {x}")
    if need_full and state != FULL:
        raise ValueError(f"derivative undefined at voxel {x}: partial frame")
    return x


def principal_directional_derivatives(frames: FrameField, x, scheme="limit", spacing_normalize=False, window=None):
    """``du1/du_k`` (rows k = 1..3) at voxel ``x``."""
    x = _check_voxel(frames, x)
    _, D, _, _ = _compute(frames, scheme, spacing_normalize, window)
    return D[x]


def connections(frames: FrameField, x, scheme="limit", spacing_normalize=False, window=None):
    """Connection scalars at ``x`` as a dict keyed ``"c1jk"``."""
    x = _check_voxel(frames, x)
    D = principal_directional_derivatives(frames, x, scheme, spacing_normalize, window)
    u = frames.u[x]
    return {f"c1{j + 1}{k + 1}": float(u[j] @ D[k]) for j in (1, 2) for k in range(3)}


def distortion_indices(frames: FrameField, x, scheme="limit", spacing_normalize=False, window=None):
    """Distortion indices at ``x``; partial frames give zeros flagged invalid."""
    x = _check_voxel(frames, x, need_full=False)
    if frames.state[x] != FULL:
        return DistortionIndices(0.0, 0.0, 0.0, 0.0, valid=False)
    c = connections(frames, x, scheme, spacing_normalize, window)
    s = float(np.hypot(c["c122"], c["c133"]))
    b = float(np.hypot(c["c121"], c["c131"]))
    t = float(np.hypot(c["c123"], c["c132"]))
    return DistortionIndices(s, b, t, float(np.sqrt(s * s + b * b + t * t)))


def resolution_scaled_rotation(frames: FrameField, x, axis: int, spacing=None, window=None) -> ScaledRotation:
    """Central-difference rotation along ``axis`` with its angle per mm.

    ``spacing`` overrides the field's spacing along ``axis``. With ``window``
    the multi-step Riemannian mean is used.
    """
    x = _check_voxel(frames, x, need_full=False)
    sp = list(frames.spacing)
    if spacing is not None:
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        sp[axis] = float(spacing)
    f = FrameField(frames.u, frames.state, tuple(sp))
    W, _ = rotation_vectors(f, spacing_normalize=True, window=window)
    present = frames.state != ABSENT
    defined = bool(_clamped_shift(present, axis, 1)[x] or _clamped_shift(present, axis, -1)[x])
    return ScaledRotation(exp_so3(W[x][axis]), 1.0, defined=defined)
