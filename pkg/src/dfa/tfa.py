"""Tensor field analysis: spatial gradients of tensor fields, their
projections to vector and scalar fields, rotation tangents and a
fourth-order structure tensor.

Tensor volumes are (X, Y, Z, 3, 3) arrays; on disk they use six
components in the order xx, xy, xz, yy, yz, zz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotations import exp_so3

SIX_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
DEGENERATE_TOL = 1e-9


def six_to_matrix(t6):
    t6 = np.asarray(t6, dtype=float)
    D = np.empty(t6.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(SIX_PAIRS):
        D[..., i, j] = t6[..., k]
        D[..., j, i] = t6[..., k]
    return D


def matrix_to_six(D):
    D = np.asarray(D, dtype=float)
    return np.stack([D[..., i, j] for i, j in SIX_PAIRS], axis=-1)


@dataclass
class TensorField:
    tensors: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.tensors.shape[-2:] != (3, 3) or self.tensors.ndim != 5:
            raise ValueError("tensor field must be (X, Y, Z, 3, 3)")
        if not np.allclose(self.tensors, np.swapaxes(self.tensors, -1, -2), rtol=0, atol=1e-12):
            raise ValueError("tensor field is not symmetric")
        self.spacing = tuple(float(s) for s in self.spacing)


def gradient_field(field: TensorField):
    """``G[..., i, j, k] = dD_ij/dx_k`` by central differences (replicate edges).

    Edge voxels use the clamped neighbour, so the difference there spans
    one voxel but is still divided by two spacings.
    """
    D = field.tensors
    G = np.empty(D.shape + (3,))
    for k in range(3):
        n = D.shape[k]
        up = np.take(D, np.clip(np.arange(n) + 1, 0, n - 1), axis=k)
        dn = np.take(D, np.clip(np.arange(n) - 1, 0, n - 1), axis=k)
        G[..., k] = (up - dn) / (2.0 * field.spacing[k])
    return G


def tensor_gradient(field: TensorField, x):
    """3x3x3 gradient at voxel ``x``."""
    return gradient_field(field)[tuple(int(i) for i in x)]


def project_gradient_to_vector(W, grad):
    """``sum_ij W_ij dD_ij/dx_k``: the gradient of the scalar field ``W : D``."""
    return np.einsum("...ij,...ijk->...k", np.asarray(W, dtype=float), grad)


def project_gradient_to_scalar(W, grad, v):
    """``sum_ijk W_ij v_k dD_ij/dx_k``: directional derivative of ``W : D`` along ``v``."""
    return np.einsum("...ij,...ijk,...k->...", np.asarray(W, dtype=float), grad, np.asarray(v, dtype=float))


def gradient_norm(grad):
    return np.sqrt(np.einsum("...ijk,...ijk->...", grad, grad))


def mean_diffusivity_gradient(grad):
    return project_gradient_to_vector(np.eye(3) / 3.0, grad)


def fractional_anisotropy(D):
    D = np.asarray(D, dtype=float)
    md = np.trace(D, axis1=-2, axis2=-1) / 3.0
    dev = D - md[..., None, None] * np.eye(3)
    num = np.sqrt(np.einsum("...ij,...ij->...", dev, dev))
    den = np.sqrt(np.einsum("...ij,...ij->...", D, D))
    return np.sqrt(1.5) * num / np.where(den > 0, den, 1.0)


def fa_derivative(D):
    """``dFA/dD`` for one symmetric tensor."""
    D = np.asarray(D, dtype=float)
    dev = D - np.trace(D) / 3.0 * np.eye(3)
    nd = np.linalg.norm(dev)
    n = np.linalg.norm(D)
    if nd == 0:
        return np.zeros((3, 3))
    return np.sqrt(1.5) * (dev / (nd * n) - nd * D / n**3)


def tensor_mode(D):
    """Mode ``3 sqrt(6) det(A / |A|)`` of the deviatoric part ``A``, in [-1, 1]."""
    D = np.asarray(D, dtype=float)
    dev = D - np.trace(D, axis1=-2, axis2=-1)[..., None, None] / 3.0 * np.eye(3)
    nd = np.sqrt(np.einsum("...ij,...ij->...", dev, dev))
    safe = np.where(nd > 0, nd, 1.0)
    val = 3.0 * np.sqrt(6.0) * np.linalg.det(dev / safe[..., None, None])
    return np.where(nd > 0, np.clip(val, -1.0, 1.0), 0.0)


def rotation_tangent(D, p, tol=DEGENERATE_TOL):
    """``d/dt [R_p(t) D R_p(t)^T]`` at t = 0 for rotations about eigenvector ``p``.

    ``p`` is 1, 2 or 3 (eigenvalues in descending order). Raises when the
    eigenvalues are not distinct.
    """
    D = np.asarray(D, dtype=float)
    if p not in (1, 2, 3):
        raise ValueError("p must be 1, 2 or 3")
    lam, vec = np.linalg.eigh(D)
    lam, vec = lam[::-1], vec[:, ::-1]
    scale = max(np.max(np.abs(lam)), 1e-300)
    if np.min(np.abs(np.diff(lam))) <= tol * scale:
        raise ValueError("degenerate tangent: repeated eigenvalues")
    e = vec[:, p - 1]
    K = np.array([[0, -e[2], e[1]], [e[2], 0, -e[0]], [-e[1], e[0], 0]])
    return K @ D - D @ K


def rotate_about_eigenvector(D, p, theta):
    lam, vec = np.linalg.eigh(D)
    e = vec[:, ::-1][:, p - 1]
    R = exp_so3(theta * e)
    return R @ D @ R.T


@dataclass
class StructureTensor4:
    """Fourth-order tensor ``S[i, j, k, l] = G[i, j, k] G[i, j, l]`` and its 6x6 form."""

    tensor: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    complex_eigenvalues: bool


def structure_tensor_4(grad):
    """Per-component product structure tensor of a 3x3x3 gradient.

    The 6x6 matrix maps the pair index of (i, j) to rows and of (k, l) to
    columns in the order xx, xy, xz, yy, yz, zz. Eigenvalues of that
    (generally non-symmetric) matrix are sorted by descending magnitude.
    """
    G = np.asarray(grad, dtype=float)
    S = np.einsum("ijk,ijl->ijkl", G, G)
    M = np.empty((6, 6))
    for r, (i, j) in enumerate(SIX_PAIRS):
        for c, (k, l) in enumerate(SIX_PAIRS):
            M[r, c] = S[i, j, k, l]
    ev = np.linalg.eigvals(M)
    ev = ev[np.argsort(-np.abs(ev), kind="stable")]
    is_complex = bool(np.any(np.abs(ev.imag) > 1e-12 * max(np.max(np.abs(ev)), 1e-300)))
    return StructureTensor4(S, M, ev if is_complex else ev.real, is_complex)


def contract_structure(S, W, v):
    """``sum W_ij S_ijkl v_k v_l``."""
    return float(np.einsum("ij,ijkl,k,l->", W, S.tensor if isinstance(S, StructureTensor4) else S, v, v))


def principal_eigenvectors(D, fa_threshold=0.3):
    """Principal eigenvector per tensor with unit weight; zero where FA <= threshold."""
    D = np.asarray(D, dtype=float)
    lam, vec = np.linalg.eigh(D)
    u = vec[..., :, -1]
    keep = fractional_anisotropy(D) > fa_threshold
    first = np.argmax(np.abs(u) > 1e-12, axis=-1)
    lead = np.take_along_axis(u, first[..., None], axis=-1)[..., 0]
    u = u * np.where(lead < 0, -1.0, 1.0)[..., None]
    return np.where(keep[..., None], u, 0.0), keep.astype(float)


def structure4_map(field: TensorField):
    """Largest-magnitude eigenvalue (real part) of the structure tensor per voxel."""
    G = gradient_field(field)
    S = np.einsum("...ijk,...ijl->...ijkl", G, G)
    idx = np.array(SIX_PAIRS)
    M = S[..., idx[:, 0][:, None], idx[:, 1][:, None], idx[:, 0][None, :], idx[:, 1][None, :]]
    ev = np.linalg.eigvals(M)
    k = np.argmax(np.abs(ev), axis=-1)
    return np.take_along_axis(ev, k[..., None], axis=-1)[..., 0].real
