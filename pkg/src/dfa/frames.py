"""Local orthogonal frames of a peak field.

At each voxel the first axis is the principal peak ``u1``. Peaks of the
neighbouring voxels are projected onto the plane perpendicular to ``u1``
and summed as Gaussian-weighted dyadics; the dominant eigenvector of that
in-plane tensor is ``u2`` and ``u3 = u1 x u2``. When the two leading
eigenvalues tie the in-plane direction is undefined and the frame is kept
partial (``u2 = u3 = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

ABSENT, PARTIAL, FULL = 0, 1, 2
TIE_RTOL = 1e-6
# leading eigenvalues below this fraction of the total neighbourhood weight
# are treated as zero (parallel neighbourhoods produce only rounding noise)
ZERO_RTOL = 1e-12


@dataclass
class PeakField:
    """Up to K weighted peaks per voxel, strongest first.

    ``dirs`` is (X, Y, Z, K, 3) and ``vals`` (X, Y, Z, K); zero rows pad
    voxels with fewer peaks.
    """

    dirs: np.ndarray
    vals: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.dirs = np.asarray(self.dirs, dtype=float)
        self.vals = np.asarray(self.vals, dtype=float)
        if self.dirs.ndim != 5 or self.dirs.shape[:-1] != self.vals.shape or self.dirs.shape[-1] != 3:
            raise ValueError("peak field needs dirs (X, Y, Z, K, 3) and vals (X, Y, Z, K)")
        self.spacing = tuple(float(s) for s in self.spacing)

    @classmethod
    def from_principal(cls, axes, weights=None, spacing=(1.0, 1.0, 1.0)):
        """Single-peak field from a (X, Y, Z, 3) direction volume (zero = empty)."""
        axes = np.asarray(axes, dtype=float)
        present = np.linalg.norm(axes, axis=-1) > 0
        if weights is None:
            weights = present.astype(float)
        return cls(axes[..., None, :], np.where(present, weights, 0.0)[..., None], spacing)

    @property
    def dims(self):
        return self.vals.shape[:3]

    @property
    def mask(self):
        return np.linalg.norm(self.dirs[..., 0, :], axis=-1) > 0

    def principal(self):
        return self.dirs[..., 0, :]


@dataclass
class FrameField:
    """Per-voxel frames: ``u[..., i, :]`` is axis ``u_{i+1}``; ``state`` holds
    ABSENT, PARTIAL or FULL."""

    u: np.ndarray
    state: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    @property
    def dims(self):
        return self.state.shape

    @property
    def u1(self):
        return self.u[..., 0, :]


def _offsets(radius):
    r = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)


def _shift(a, d, fill=0.0):
    """``out[x] = a[x + d]`` with out-of-volume entries set to ``fill``."""
    out = np.full_like(a, fill)
    src, dst = [], []
    for k, n in zip(d, a.shape[:3]):
        if abs(k) >= n:
            return out
        src.append(slice(max(k, 0), n + min(k, 0)))
        dst.append(slice(max(-k, 0), n + min(-k, 0)))
    out[tuple(dst)] = a[tuple(src)]
    return out


def projected_tensors(peaks: PeakField, sigma=1.0, radius=1, weight_fn: Optional[Callable] = None):
    """In-plane orientational tensors ``Q_x`` for every voxel (X, Y, Z, 3, 3).

    Also returns the summed scalar weights used for the zero test. Voxels
    outside the volume contribute nothing. ``weight_fn(offset, u1)`` may
    return an extra per-voxel multiplier for anisotropic neighbourhoods.
    """
    u1 = peaks.principal()
    Q = np.zeros(u1.shape[:3] + (3, 3))
    total = np.zeros(u1.shape[:3])
    for d in _offsets(radius):
        g = np.exp(-float(d @ d) / (2.0 * sigma**2))
        if weight_fn is not None:
            g = g * weight_fn(d, u1)
        nd = _shift(peaks.dirs, d)
        nv = _shift(peaks.vals, d)
        perp = nd - np.einsum("xyzkc,xyzc->xyzk", nd, u1)[..., None] * u1[..., None, :]
        wv = g[..., None] * nv if np.ndim(g) else g * nv
        Q += np.einsum("xyzk,xyzki,xyzkj->xyzij", wv, perp, perp)
        total += np.abs(wv).sum(axis=-1)
    return Q, total


def projected_orientational_tensor(peaks: PeakField, x, sigma=1.0, radius=1):
    """``Q_x`` at one voxel, computed directly from its neighbourhood."""
    x = tuple(int(i) for i in x)
    if not peaks.mask[x]:
        raise ValueError(f"frame undefined at voxel {x}: no principal peak")
    u1 = peaks.dirs[x][0]
    Q = np.zeros((3, 3))
    for d in _offsets(radius):
        y = tuple(np.add(x, d))
        if any(c < 0 or c >= n for c, n in zip(y, peaks.dims)):
            continue
        w = np.exp(-float(d @ d) / (2.0 * sigma**2))
        for u, f in zip(peaks.dirs[y], peaks.vals[y]):
            p = u - (u @ u1) * u1
            Q += w * f * np.outer(p, p)
    return Q


def _canonical(v):
    """Row-wise sign flip so the first component above 1e-12 is positive."""
    big = np.abs(v) > 1e-12
    first = np.argmax(big, axis=-1)
    lead = np.take_along_axis(v, first[..., None], axis=-1)[..., 0]
    sign = np.where(lead < 0, -1.0, 1.0)
    return v * sign[..., None]


def frame_field(peaks: PeakField, sigma=1.0, radius=1, mode="director", tie_rtol=TIE_RTOL, weight_fn=None):
    """Frames at every voxel with a principal peak.

    ``mode`` is ``"director"`` (eigenvector of ``Q_x``), or for
    sign-resolved vector peaks ``"vector-mean"`` (normalised mean projected
    vector) or ``"vector-max"`` (largest weighted projected vector).
    """
    if radius < 0 or sigma <= 0:
        raise ValueError("radius must be >= 0 and sigma > 0")
    mask = peaks.mask
    u1 = _canonical(peaks.principal()) * mask[..., None]
    u2 = np.zeros_like(u1)
    full = np.zeros(mask.shape, dtype=bool)
    if mode == "director":
        Q, total = projected_tensors(peaks, sigma, radius, weight_fn)
        lam, vec = np.linalg.eigh(Q[mask])
        order = np.argsort(-np.abs(lam), axis=-1, kind="stable")
        la = np.take_along_axis(lam, order[:, :1], axis=1)[:, 0]
        lb = np.take_along_axis(lam, order[:, 1:2], axis=1)[:, 0]
        top = np.take_along_axis(vec, order[:, None, :1], axis=2)[..., 0]
        tie = np.abs(np.abs(la) - np.abs(lb)) / np.maximum(np.abs(la), 1e-30) < tie_rtol
        tiny = np.abs(la) <= ZERO_RTOL * np.maximum(total[mask], 1e-300)
        ok = ~(tie | tiny)
        cand = top - np.einsum("ni,ni->n", top, u1[mask])[:, None] * u1[mask]
    elif mode in ("vector-mean", "vector-max"):
        acc = np.zeros(mask.shape + (3,))
        best = np.zeros(mask.shape)
        for d in _offsets(radius):
            g = np.exp(-float(d @ d) / (2.0 * sigma**2))
            nd = _shift(peaks.dirs, d)
            nv = _shift(peaks.vals, d)
            perp = nd - np.einsum("xyzkc,xyzc->xyzk", nd, u1)[..., None] * u1[..., None, :]
            wp = (g * nv)[..., None] * perp
            if mode == "vector-mean":
                acc += wp.sum(axis=-2)
            else:
                mag = np.linalg.norm(wp, axis=-1)
                k = np.argmax(mag, axis=-1)
                m = np.take_along_axis(mag, k[..., None], axis=-1)[..., 0]
                pick = np.take_along_axis(wp, k[..., None, None], axis=-2)[..., 0, :]
                better = m > best
                best = np.where(better, m, best)
                acc = np.where(better[..., None], pick, acc)
        cand = acc[mask]
        ok = np.linalg.norm(cand, axis=-1) > 1e-12
    else:
        raise ValueError(f"unknown frame mode {mode!r}")
    cand = cand / np.where(ok, np.linalg.norm(cand, axis=-1), 1.0)[:, None]
    cand = np.where(ok[:, None], cand, 0.0)
    if mode == "director":
        cand = _canonical(cand)
    u2[mask] = cand
    full[mask] = ok
    u3 = np.cross(u1, u2)
    state = np.where(full, FULL, np.where(mask, PARTIAL, ABSENT)).astype(np.uint8)
    return FrameField(np.stack([u1, u2, u3], axis=-2), state, peaks.spacing)


def local_frame(peaks: PeakField, x, sigma=1.0, radius=1, tie_rtol=TIE_RTOL):
    """Frame ``(u1, u2, u3, state)`` at one voxel."""
    Q = projected_orientational_tensor(peaks, x, sigma, radius)
    u1 = _canonical(peaks.dirs[tuple(x)][0])
    lam, vec = np.linalg.eigh(Q)
    order = np.argsort(-np.abs(lam), kind="stable")
    la, lb = abs(lam[order[0]]), abs(lam[order[1]])
    total = sum(
        np.exp(-float(d @ d) / (2.0 * sigma**2)) * np.abs(peaks.vals[tuple(np.add(x, d))]).sum()
        for d in _offsets(radius)
        if all(0 <= c < n for c, n in zip(np.add(x, d), peaks.dims))
    )
    if abs(la - lb) / max(la, 1e-30) < tie_rtol or la <= ZERO_RTOL * total:
        z = np.zeros(3)
        return u1, z, z, PARTIAL
    u2 = vec[:, order[0]]
    u2 = _canonical(u2 - (u2 @ u1) * u1)
    u2 /= np.linalg.norm(u2)
    return u1, u2, np.cross(u1, u2), FULL
