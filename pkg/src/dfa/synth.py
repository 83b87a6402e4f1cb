"""Deterministic synthetic tensor fields with known director geometry.

Every field is defined on continuous physical coordinates centred on the
volume, so a global rotation ``G`` can be applied by sampling the canonical
field at ``G^T p`` and rotating the tensors by ``G``.

Kinds (canonical orientation, ``phi`` growing linearly along x):

- ``splay``: ``u1 = Rz(phi) e_y``, fanning across x.
- ``bend``: ``u1 = Rz(phi) e_x``, bending along x.
- ``twist``: ``u1 = Rx(phi) e_y``; N+1 columns spanning ``angle`` rotate by
  ``angle / N`` per voxel.
- ``helical``: twist about an arbitrary ``axis`` at ``rate`` radians per mm.
- ``circle_bend`` / ``circle_splay``: tangential / radial in-plane fields
  around the z axis; a voxel on the axis is singular, isotropic and masked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .frames import PeakField
from .rotations import exp_so3
from .sphere import DEFAULT_ORDER, tensors_to_sh

KINDS = ("splay", "bend", "twist", "circle_bend", "circle_splay", "helical")
DEFAULT_EIGENVALUES = (1.7e-3, 0.2e-3, 0.2e-3)
DEFAULT_ANGLE = {
    "splay": np.pi / 2,
    "bend": np.pi / 2,
    "twist": np.pi,
    "helical": np.pi,
    "circle_bend": 0.0,
    "circle_splay": 0.0,
}


@dataclass
class SyntheticSpec:
    """Parameters of a synthetic field.

    ``angle`` is the total rotation across the x extent (ignored by the
    circular kinds); ``rate`` (rad/mm) overrides it for ``helical``.
    ``mode_range`` gives the fraction by which the middle eigenvalue moves
    toward the mean of the outer two, interpolated from the first to the
    last y row. ``rotation`` is an optional global rotation matrix.
    """

    kind: str
    dims: tuple = (32, 16, 3)
    spacing: tuple = (1.0, 1.0, 1.0)
    eigenvalues: tuple = DEFAULT_EIGENVALUES
    angle: Optional[float] = None
    mode_range: tuple = (0.0, 0.0)
    rotation: Optional[np.ndarray] = None
    axis: tuple = (1.0, 0.0, 0.0)
    rate: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 3:
            raise ValueError("dims must be three integers >= 3")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError("spacing must be three positive numbers")
        ev = tuple(float(e) for e in self.eigenvalues)
        if len(ev) != 3 or ev[2] <= 0 or not ev[0] >= ev[1] >= ev[2]:
            raise ValueError("eigenvalues must be positive and descending")
        self.eigenvalues = ev
        lo, hi = (float(m) for m in self.mode_range)
        if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
            raise ValueError("mode_range fractions must lie in [0, 1]")
        self.mode_range = (lo, hi)
        if self.angle is None:
            self.angle = DEFAULT_ANGLE[self.kind]
        if self.rotation is not None:
            R = np.asarray(self.rotation, dtype=float)
            if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-10) or np.linalg.det(R) < 0:
                raise ValueError("rotation must be a proper 3x3 rotation matrix")
            self.rotation = R
        a = np.asarray(self.axis, dtype=float)
        if a.shape != (3,) or np.linalg.norm(a) == 0:
            raise ValueError("axis must be a nonzero 3-vector")


@dataclass
class SyntheticField:
    tensors: np.ndarray
    directions: np.ndarray
    mask: np.ndarray
    spacing: tuple
    spec: SyntheticSpec = field(repr=False)

    def sh(self, L=DEFAULT_ORDER):
        """Tensor-ODF SH coefficients per voxel (masked voxels stay zero)."""
        out = np.zeros(self.mask.shape + ((L + 1) * (L + 2) // 2,))
        out[self.mask] = tensors_to_sh(self.tensors[self.mask], L)
        return out

    def peak_field(self):
        """Unit-weight single-peak field from the construction directions."""
        return PeakField.from_principal(self.directions, spacing=self.spacing)


def _rot(axis, angle):
    axis = np.asarray(axis, dtype=float)
    return exp_so3(angle[..., None] * axis)


def _perpendicular(a):
    t = np.eye(3)[int(np.argmin(np.abs(a)))]
    p = np.cross(a, t)
    return p / np.linalg.norm(p)


def _canonical_frames(spec: SyntheticSpec, q):
    """Canonical (e1, e2) orientation at canonical coordinates ``q`` (..., 3)."""
    X = spec.dims[0]
    length = (X - 1) * spec.spacing[0]
    ex, ey, ez = np.eye(3)
    kind = spec.kind
    singular = np.zeros(q.shape[:-1], dtype=bool)
    if kind in ("splay", "bend", "twist"):
        phi = spec.angle * q[..., 0] / length
        if kind == "twist":
            R = _rot(ex, phi)
            e1, e2 = R @ ey, R @ ez
        else:
            R = _rot(ez, phi)
            e1 = R @ (ey if kind == "splay" else ex)
            e2 = np.broadcast_to(ez, e1.shape).copy()
    elif kind == "helical":
        a = np.asarray(spec.axis, dtype=float)
        a = a / np.linalg.norm(a)
        rate = spec.rate if spec.rate is not None else spec.angle / length
        phi = rate * (q @ a)
        R = _rot(a, phi)
        p0 = _perpendicular(a)
        e1, e2 = R @ p0, R @ np.cross(a, p0)
    else:
        r = q[..., :2]
        rn = np.linalg.norm(r, axis=-1)
        singular = rn < 1e-9 * min(spec.spacing)
        safe = np.where(singular, 1.0, rn)
        radial = np.zeros(q.shape)
        radial[..., :2] = r / safe[..., None]
        radial[singular] = ex
        tangent = np.cross(ez, radial)
        e1, e2 = (tangent, radial) if kind == "circle_bend" else (radial, tangent)
    return e1, e2, singular


def generate(spec: SyntheticSpec) -> SyntheticField:
    """Build the tensor field described by ``spec``."""
    X, Y, Z = spec.dims
    idx = np.stack(np.meshgrid(np.arange(X), np.arange(Y), np.arange(Z), indexing="ij"), axis=-1)
    centre = (np.array(spec.dims) - 1) / 2.0
    p = (idx - centre) * np.array(spec.spacing)
    G = spec.rotation
    q = p if G is None else p @ G  # rows are G^T p
    e1, e2, singular = _canonical_frames(spec, q)
    e3 = np.cross(e1, e2)
    l1, l2, l3 = spec.eigenvalues
    lo, hi = spec.mode_range
    frac = lo + (hi - lo) * (np.arange(Y) / (Y - 1))
    lam2 = (l2 + frac * ((l1 + l3) / 2.0 - l2))[None, :, None] * np.ones((X, Y, Z))
    D = (
        l1 * np.einsum("...i,...j->...ij", e1, e1)
        + lam2[..., None, None] * np.einsum("...i,...j->...ij", e2, e2)
        + l3 * np.einsum("...i,...j->...ij", e3, e3)
    )
    D = 0.5 * (D + np.swapaxes(D, -1, -2))
    D[singular] = np.eye(3) * (l1 + l2 + l3) / 3.0
    u = e1 if G is None else e1 @ G.T
    first = np.argmax(np.abs(u) > 1e-12, axis=-1)
    lead = np.take_along_axis(u, first[..., None], axis=-1)[..., 0]
    u = u * np.where(lead < 0, -1.0, 1.0)[..., None]
    if G is not None:
        D = G @ D @ G.T
    mask = ~singular
    u[singular] = 0.0
    return SyntheticField(D, u, mask, spec.spacing, spec)
