"""Director algebra.

A director is a unit axis identified with its negation; a weighted director
pairs such an axis with a scalar weight. Everything here is written so that
flipping the sign of any input axis leaves the result's equivalence class
unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .rotations import exp_so3, rotation_between

MEAN_EXHAUSTIVE_MAX = 20
TIE_RTOL = 1e-9
_AXIS_TOL = 1e-12


def canonical_axis(v, tol=_AXIS_TOL):
    """Flip ``v`` so that its first clearly nonzero component is positive."""
    v = np.asarray(v, dtype=float)
    for c in v:
        if abs(c) > tol:
            return v if c > 0 else -v
    return v


def _unit(v, what="axis"):
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"degenerate {what}")
    return v / n


@dataclass(frozen=True)
class WeightedDirector:
    """Unit axis plus weight; ``(v, w)`` and ``(-v, w)`` are the same object."""

    axis: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "axis", _unit(self.axis))
        object.__setattr__(self, "weight", float(self.weight))

    @classmethod
    def from_vector(cls, vec):
        """Director representation ``w v`` of a vector (weight = its norm)."""
        vec = np.asarray(vec, dtype=float)
        n = np.linalg.norm(vec)
        if n == 0.0:
            raise ValueError("degenerate axis")
        return cls(vec / n, n)

    def dyadic(self):
        return self.weight * np.outer(self.axis, self.axis)

    def vector(self):
        return self.weight * self.axis

    def flipped(self):
        return WeightedDirector(-self.axis, self.weight)

    def same_as(self, other, atol=1e-10):
        """Equality of the dyadic forms."""
        return bool(np.allclose(self.dyadic(), other.dyadic(), atol=atol))


class Aggregate(NamedTuple):
    director: WeightedDirector
    unique: bool


@dataclass(frozen=True)
class ScaledRotation:
    rotation: np.ndarray
    scale: float = 1.0
    defined: bool = True

    @property
    def angle(self):
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def matrix(self):
        return self.scale * self.rotation

    def apply(self, vec):
        return self.scale * (self.rotation @ np.asarray(vec, dtype=float))


IDENTITY = ScaledRotation(np.eye(3), 1.0)


@dataclass
class DirectorField:
    """One optional weighted director per voxel.

    ``axes`` has shape (X, Y, Z, 3); voxels whose axis is all zeros are empty.
    """

    axes: np.ndarray
    weights: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.axes = np.asarray(self.axes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.axes.shape[:-1] != self.weights.shape or self.axes.shape[-1] != 3:
            raise ValueError("axes must be (X, Y, Z, 3) and weights (X, Y, Z)")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.mask = np.linalg.norm(self.axes, axis=-1) > 0

    @property
    def dims(self):
        return self.weights.shape

    def get(self, x):
        x = tuple(int(i) for i in x)
        if not self.mask[x]:
            return None
        return WeightedDirector(self.axes[x], self.weights[x])


def _as_arrays(dirs):
    if len(dirs) == 0:
        raise ValueError("no directors")
    V = np.array([d.axis for d in dirs], dtype=float)
    w = np.array([d.weight for d in dirs], dtype=float)
    return V, w


def _signed_sums(X):
    """All sums ``X[0] + sum_i s_i X[i]``; bit ``i-1`` of the row index is set when s_i = -1."""
    sums = X[:1].copy()
    for x in X[1:]:
        sums = np.concatenate([sums + x, sums - x])
    return sums


def mean_director(dirs: Sequence[WeightedDirector]) -> Aggregate:
    """Mean weighted director: the sign assignment with maximal norm of the sum.

    Weights are replaced by their absolute values. Up to
    ``MEAN_EXHAUSTIVE_MAX`` directors the search enumerates every sign class
    (first sign fixed); larger sets fall back to greedy sign flipping and
    emit a warning. ``unique`` is False when several sign classes tie.
    """
    V, w = _as_arrays(dirs)
    X = np.abs(w)[:, None] * V
    n = len(X)
    if n <= MEAN_EXHAUSTIVE_MAX:
        sums = _signed_sums(X)
        sq = np.einsum("ij,ij->i", sums, sums)
        best = sq.max()
        near = np.count_nonzero(sq >= best - 1e-12 * max(best, 1e-300))
        # among exact maxima pick a canonical representative
        cands = [canonical_axis(sums[i]) for i in np.nonzero(sq == best)[0]]
        vec = min(cands, key=lambda v: tuple(v)) / n
        unique = near == 1
    else:
        warnings.warn(
            f"mean_director: {n} directors exceed exhaustive limit; using greedy sign search",
            RuntimeWarning,
            stacklevel=2,
        )
        s = np.sign(X @ X[np.argmax(np.abs(w))])
        s[s == 0] = 1.0
        improved = True
        while improved:
            improved = False
            total = s @ X
            for i in range(n):
                # flipping s_i changes |total|^2 by -4 s_i x_i.(total - s_i x_i)
                if s[i] * (X[i] @ (total - s[i] * X[i])) < -1e-15:
                    total = total - 2 * s[i] * X[i]
                    s[i] = -s[i]
                    improved = True
        vec = canonical_axis(s @ X) / n
        unique = True
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        return Aggregate(WeightedDirector(canonical_axis(V[0]), 0.0), False)
    return Aggregate(WeightedDirector(vec / norm, norm), unique)


def main_director(dirs: Sequence[WeightedDirector]) -> Aggregate:
    """Eigenpair of ``sum w_i v_i v_i^T`` with the largest absolute eigenvalue."""
    V, w = _as_arrays(dirs)
    T = np.einsum("i,ij,ik->jk", w, V, V)
    lam, vecs = np.linalg.eigh(T)
    order = np.argsort(-np.abs(lam), kind="stable")
    top, second = np.abs(lam[order[0]]), np.abs(lam[order[1]])
    unique = (top - second) > TIE_RTOL * max(top, 1e-300)
    axis = canonical_axis(vecs[:, order[0]])
    return Aggregate(WeightedDirector(axis, lam[order[0]]), bool(unique))


def _sign_pair(a: WeightedDirector, b: WeightedDirector):
    """Signs (s1, s2) with s1 = +1 and w1 w2 s2 v1.v2 >= 0."""
    d = a.weight * b.weight * float(a.axis @ b.axis)
    return 1.0, (1.0 if d >= 0 else -1.0)


def diff_director(a: WeightedDirector, b: WeightedDirector) -> np.ndarray:
    """Director representation ``w1 s1 v1 - w2 s2 v2`` of the difference.

    The result is itself sign-ambiguous. Orthogonal inputs take s2 = +1.
    """
    if a.weight < 0 or b.weight < 0:
        raise ValueError("weights must be non-negative")
    s1, s2 = _sign_pair(a, b)
    return a.weight * s1 * a.axis - b.weight * s2 * b.axis


def diff_rotation(a: WeightedDirector, b: WeightedDirector) -> ScaledRotation:
    """Scaled rotation R with ``w1 s1 v1 = R (w2 s2 v2)``; free of sign ambiguity."""
    if a.weight < 0 or b.weight < 0:
        raise ValueError("weights must be non-negative")
    if b.weight == 0:
        raise ValueError("second director must have positive weight")
    s1, s2 = _sign_pair(a, b)
    w = rotation_between(s2 * b.axis, s1 * a.axis)
    return ScaledRotation(exp_so3(w), a.weight / b.weight)


def _neighbor(field: DirectorField, x, axis, step):
    idx = list(x)
    idx[axis] = min(max(idx[axis] + step, 0), field.dims[axis] - 1)
    return field.get(idx)


def central_difference_rotation(field: DirectorField, x, axis: int, step: int = 1) -> ScaledRotation:
    """Rotation from the mean of the two ``axis`` neighbours to the forward one.

    ``axis`` is 0, 1 or 2. Out-of-volume neighbours replicate the edge voxel.
    An empty neighbour is replaced by the centre director; when both are
    empty the identity is returned with ``defined=False``.
    """
    fwd = _neighbor(field, x, axis, step)
    bwd = _neighbor(field, x, axis, -step)
    if fwd is None and bwd is None:
        return ScaledRotation(np.eye(3), 1.0, defined=False)
    center = field.get(x)
    if fwd is None:
        fwd = center if center is not None else bwd
    if bwd is None:
        bwd = center if center is not None else fwd
    mean = mean_director([bwd, fwd]).director
    if mean.weight == 0:
        return ScaledRotation(np.eye(3), 1.0, defined=False)
    return diff_rotation(fwd, mean)


def transport_director(rotations: Sequence[ScaledRotation], u, base: WeightedDirector, k: float = 1.0):
    """Approximate director at ``x + k u`` as ``sum_i k p_i``.

    ``p_i = u_i R_i (w v)`` for non-negative ``u_i`` and ``-u_i R_i^T (w v)``
    otherwise, with ``R_i`` the scaled rotation matrices.
    """
    u = np.asarray(u, dtype=float)
    wv = base.vector()
    total = np.zeros(3)
    for ui, R in zip(u, rotations):
        M = R.matrix()
        total += k * (ui * (M @ wv) if ui >= 0 else -ui * (M.T @ wv))
    return WeightedDirector.from_vector(total)
