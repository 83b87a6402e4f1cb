"""Orientational order of spherical functions.

The orientational order transform ``OO(n) = int P2(u.n) f(u) du`` measures
how strongly a function concentrates along the axis ``n``; ``OD = 1 - OO``
is the matching dispersion. Closed forms are provided for Watson and
prolate-tensor ODFs; general SH functions go through the orientational
tensor or through the rotated ``a_{2,0}`` coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import dawsn

from ._parallel import chunked_map
from .director import canonical_axis
from .rotations import exp_so3, rotation_between
from .sphere import GFA_THRESHOLD, default_mesh, find_peaks, rotated_a20

SQRT_4PI = np.sqrt(4.0 * np.pi)

# Q_ij = int u_i u_j f(u) du as a linear map of (c00, c2,-2 .. c2,2).
# Entries come from Lebedev quadrature of u_i u_j Y_lm; they equal
# sqrt(4pi)/3, sqrt(4pi/15) and sqrt(4pi/5)/3 (doubled on zz).
_A = 1.1816359006036772
_B = 0.9152912328637689
_C = 0.5284436396808015
Q_MAP = np.array(
    [
        # c00  c2-2  c2-1  c20   c21  c22
        [_A, _B, 0.0, -_C, 0.0, 0.0],  # xx
        [0.0, 0.0, 0.0, 0.0, 0.0, _B],  # xy
        [0.0, 0.0, -_B, 0.0, 0.0, 0.0],  # xz
        [_A, -_B, 0.0, -_C, 0.0, 0.0],  # yy
        [0.0, 0.0, 0.0, 0.0, -_B, 0.0],  # yz
        [_A, 0.0, 0.0, 2 * _C, 0.0, 0.0],  # zz
    ]
)
_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _low_coeffs(c):
    c = np.asarray(getattr(c, "coeffs", c), dtype=float)
    if c.shape[-1] < 6:
        out = np.zeros(c.shape[:-1] + (6,))
        out[..., : c.shape[-1]] = c
        return out
    return c[..., :6]


def orientational_tensor(c):
    """``Q(f) = int u u^T f(u) du`` from the l <= 2 coefficients (..., 3, 3)."""
    q = _low_coeffs(c) @ Q_MAP.T
    Q = np.empty(q.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_PAIRS):
        Q[..., i, j] = q[..., k]
        Q[..., j, i] = q[..., k]
    return Q


def _unit(n):
    n = np.asarray(n, dtype=float)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def oot(c, n, method="q"):
    """Orientational order of ``c`` along axis ``n``.

    ``method="q"`` uses ``1.5 n^T Q n - 0.5 int f``; ``method="sh"`` rotates
    ``n`` onto z and returns ``sqrt(4pi/5) a_{2,0}``.
    """
    n = _unit(n)
    low = _low_coeffs(c)
    if method == "q":
        Q = orientational_tensor(low)
        return 1.5 * np.einsum("...i,...ij,...j->...", n, Q, n) - 0.5 * SQRT_4PI * low[..., 0]
    if method == "sh":
        R = exp_so3(rotation_between(n, np.broadcast_to([0.0, 0.0, 1.0], n.shape)))
        return np.sqrt(4.0 * np.pi / 5.0) * rotated_a20(low, R)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class OOResult:
    oo: float
    axis: np.ndarray

    @property
    def od(self):
        return 1.0 - self.oo


def oo_axisymmetric(a2, phi):
    """OO of an axisymmetric function at angle ``phi`` from its symmetry axis.

    ``a2`` is the degree-2 Legendre coefficient of the profile on [-1, 1].
    """
    return (1.0 + 3.0 * np.cos(2.0 * phi)) / 4.0 * 2.0 * np.pi * a2


def _positive(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError(f"{name} must be positive")
    return x


def oo_watson(kappa):
    """OO of a Watson distribution along its mean axis.

    Evaluated as ``3 / (4 sqrt(k) D(sqrt(k))) - (3 + 2k) / (4k)`` with the
    Dawson function ``D``, which stays finite for large concentrations.
    """
    k = _positive(kappa, "kappa")
    small = k < 2e-2
    ks = np.where(small, 1.0, k)
    r = np.sqrt(ks)
    direct = 3.0 / (4.0 * r * dawsn(r)) - (3.0 + 2.0 * ks) / (4.0 * ks)
    series = k * (2 / 15 + k * (4 / 315 + k * (-8 / 4725 + k * (-16 / 31185))))
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


def od_watson(kappa):
    return 1.0 - oo_watson(kappa)


def od_w(kappa):
    """Arctangent dispersion index ``(2/pi) arctan(1/k)``."""
    k = _positive(kappa, "kappa")
    out = 2.0 / np.pi * np.arctan(1.0 / k)
    return float(out) if out.ndim == 0 else out


def oo_prolate_tensor(l1, l2):
    """OO along the main axis of the ODF of a prolate tensor (l2 = l3)."""
    l1 = float(l1)
    l2 = float(l2)
    if not l2 > 0:
        raise ValueError("eigenvalues must be positive")
    if l1 < l2:
        raise ValueError("oblate not covered by closed form (l1 < l2)")
    e = l1 / l2 - 1.0
    if e < 1e-3:
        return e * (1 / 5 + e * (-3 / 35 + e * (1 / 21 + e * (-1 / 33 + e * 3 / 143))))
    r = e + 1.0
    s = np.sqrt(e)
    return float((s * (2.0 * r + 1.0) - 3.0 * r * np.arctan(s)) / (2.0 * e * s))


def oo_upper_bound(gfa_value, c00=1.0 / SQRT_4PI):
    """Upper bound on OO over all axes given GFA and ``c00``."""
    g = float(gfa_value)
    if not 0.0 <= g < 1.0:
        raise ValueError("gfa must lie in [0, 1)")
    return float(np.sqrt(4.0 * np.pi * c00**2 / 5.0) * np.sqrt(1.0 / (1.0 - g * g) - 1.0))


def oo_mixture(components: Sequence[tuple[float, Callable]]) -> Callable:
    """Pointwise weighted sum of OO functions; weights must sum to 1."""
    weights = np.array([w for w, _ in components], dtype=float)
    if not np.isclose(weights.sum(), 1.0, atol=1e-12):
        raise ValueError("mixture weights must sum to 1")
    funcs = [f for _, f in components]

    def oo(n):
        return sum(w * f(n) for w, f in zip(weights, funcs))

    return oo


@dataclass(frozen=True)
class RegionTensor:
    Q: np.ndarray
    eigenvalues: np.ndarray
    main_axis: np.ndarray
    degenerate: bool


def region_orientational_tensor(volume, region, weights="uniform", sigma=1.0, center=None, tie_tol=1e-8):
    """Weighted mean orientational tensor over a voxel region.

    ``region`` is a boolean mask over the volume's spatial dims. ``weights``
    is ``"uniform"``, ``"gaussian"`` (width ``sigma`` voxels around
    ``center``, default the region centroid) or an array over the volume;
    weights are normalised to sum to one. ``degenerate`` flags equal top
    eigenvalues, where the main orientation is not defined.
    """
    C = np.asarray(volume, dtype=float)
    region = np.asarray(region, dtype=bool)
    idx = np.argwhere(region)
    if len(idx) == 0:
        raise ValueError("empty region")
    if isinstance(weights, str):
        if weights == "uniform":
            w = np.ones(len(idx))
        elif weights == "gaussian":
            c0 = idx.mean(axis=0) if center is None else np.asarray(center, dtype=float)
            w = np.exp(-np.sum((idx - c0) ** 2, axis=1) / (2.0 * sigma**2))
        else:
            raise ValueError(f"unknown weighting {weights!r}")
    else:
        w = np.asarray(weights, dtype=float)[region]
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() == 0:
        raise ValueError("weights must be finite, non-negative and not all zero")
    w = w / w.sum()
    Q = np.einsum("n,nij->ij", w, orientational_tensor(C[region]))
    lam, vec = np.linalg.eigh(Q)
    lam, vec = lam[::-1], vec[:, ::-1]
    degenerate = bool(lam[0] - lam[1] <= tie_tol * max(abs(lam[0]), 1e-300))
    return RegionTensor(Q, lam, canonical_axis(vec[:, 0]), degenerate)


@dataclass
class OOMaps:
    oo: np.ndarray
    od: np.ndarray
    mask: np.ndarray
    axes: np.ndarray


def oo_od_maps(volume, gfa_threshold=GFA_THRESHOLD, mesh=None):
    """OO and OD along each voxel's principal ODF peak.

    Voxels without a detected peak get OO = 0 and OD = 1 and are cleared
    in ``mask``.
    """
    C = np.asarray(volume, dtype=float)
    shape = C.shape[:-1]
    flat = C.reshape(-1, C.shape[-1])
    mesh = mesh or default_mesh()

    def principal(block):
        dirs, vals = find_peaks(block, mesh, gfa_threshold, max_peaks=1)
        return dirs[:, 0], vals[:, 0]

    axes, vals = chunked_map(principal, flat, chunk=2048)
    mask = np.linalg.norm(axes, axis=-1) > 0
    oo = np.zeros(len(flat))
    if mask.any():
        oo[mask] = oot(flat[mask], axes[mask], method="sh")
    return OOMaps(oo.reshape(shape), (1.0 - oo).reshape(shape), mask.reshape(shape), axes.reshape(shape + (3,)))


def oo_along(c, n):
    """``OOResult`` for one voxel and axis."""
    return OOResult(float(oot(c, n)), canonical_axis(_unit(n)))
