"""Real even-order spherical harmonics, sphere meshes, tensor ODFs and ODF
peak detection.

Coefficient vectors are flat arrays of length ``(L+1)(L+2)/2`` ordered by
even degree ``l`` and then ``m = -l..l``. The real basis is

    Y_l^m = sqrt(2) Re(y_l^|m|)   for m < 0
    Y_l^0 = y_l^0
    Y_l^m = sqrt(2) Im(y_l^m)     for m > 0

with ``y_l^m`` the complex harmonics built on associated Legendre functions
that include the Condon-Shortley phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule
from scipy.spatial import ConvexHull

from .director import WeightedDirector

DEFAULT_ORDER = 8
GFA_THRESHOLD = 0.3
PEAK_RATIO = 0.5
MERGE_ANGLE_DEG = 5.0
FLAT_RTOL = 1e-10


def n_coeffs(L):
    if L < 0 or L % 2:
        raise ValueError(f"SH order must be even and non-negative, got {L}")
    return (L + 1) * (L + 2) // 2


def order_from_ncoeffs(n):
    L = 0
    while n_coeffs(L) < n:
        L += 2
    if n_coeffs(L) != n:
        raise ValueError(f"{n} is not a valid even-order SH coefficient count")
    return L


def sh_index(l, m):
    """Flat index of (l, m) for even l."""
    if l % 2 or abs(m) > l:
        raise ValueError(f"no even-order coefficient for (l={l}, m={m})")
    return l * (l - 1) // 2 + m + l


@lru_cache(maxsize=None)
def sh_degrees(L):
    """Arrays (l, m) for every flat index up to order L."""
    ls, ms = [], []
    for l in range(0, L + 1, 2):
        for m in range(-l, l + 1):
            ls.append(l)
            ms.append(m)
    return np.array(ls), np.array(ms)


@dataclass
class SHCoefficients:
    """One voxel's even-order SH coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.max_order = order_from_ncoeffs(self.coeffs.shape[-1])

    def __getitem__(self, lm):
        l, m = lm
        if abs(m) > l:
            raise ValueError(f"|m| > l for (l={l}, m={m})")
        if l % 2 or l > self.max_order:
            return 0.0
        return float(self.coeffs[sh_index(l, m)])

    def __array__(self, dtype=None, copy=None):
        return self.coeffs if dtype is None else self.coeffs.astype(dtype)


def _coeffs(c):
    return np.asarray(c.coeffs if isinstance(c, SHCoefficients) else c, dtype=float)


def _legendre_normalized(lmax, x):
    """Normalised associated Legendre values sqrt((2l+1)/4pi (l-m)!/(l+m)!) P_l^m(x).

    Returns an array of shape (lmax+1, lmax+1, *x.shape) indexed [l, m]; the
    Condon-Shortley phase is included.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((lmax + 1, lmax + 1) + x.shape)
    P[0, 0] = np.sqrt(1.0 / (4.0 * np.pi))
    for m in range(1, lmax + 1):
        P[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(0, lmax):
        P[m + 1, m] = np.sqrt(2 * m + 3.0) * x * P[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[l, m] = a * (x * P[l - 1, m] - b * P[l - 2, m])
    return P


def sh_matrix(L, points):
    """Basis matrix B[..., j] = Y_j(u) for unit vectors ``points`` (..., 3)."""
    u = np.asarray(points, dtype=float)
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    z = np.clip(u[..., 2], -1.0, 1.0)
    phi = np.arctan2(u[..., 1], u[..., 0])
    P = _legendre_normalized(L, z)
    out = np.empty(u.shape[:-1] + (n_coeffs(L),))
    r2 = np.sqrt(2.0)
    for l in range(0, L + 1, 2):
        base = l * (l - 1) // 2 + l
        out[..., base] = P[l, 0]
        for m in range(1, l + 1):
            out[..., base - m] = r2 * P[l, m] * np.cos(m * phi)
            out[..., base + m] = r2 * P[l, m] * np.sin(m * phi)
    return out


def sh_basis(l, m, u):
    """Single real SH basis function Y_l^m at unit vector(s) ``u`` (any l)."""
    if abs(m) > l:
        raise ValueError(f"|m| must not exceed l (l={l}, m={m})")
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    z = np.clip(u[..., 2], -1.0, 1.0)
    phi = np.arctan2(u[..., 1], u[..., 0])
    P = _legendre_normalized(l, z)[l, abs(m)]
    if m < 0:
        val = np.sqrt(2.0) * P * np.cos(-m * phi)
    elif m == 0:
        val = P
    else:
        val = np.sqrt(2.0) * P * np.sin(m * phi)
    return val if np.ndim(val) else float(val)


def sh_eval(c, u):
    """Synthesis ``f(u) = sum c_lm Y_lm(u)``; ``c`` may carry leading voxel dims
    matching those of ``u``'s leading dims, or be a single vector."""
    c = _coeffs(c)
    L = order_from_ncoeffs(c.shape[-1])
    B = sh_matrix(L, u)
    if c.ndim == 1:
        return B @ c
    return np.einsum("...j,...j->...", B, c)


@dataclass
class FitResult:
    coeffs: np.ndarray
    residual: float


def sh_fit(points, values, L=DEFAULT_ORDER, cond_limit=1e10):
    """Least-squares SH coefficients from samples ``values`` at ``points``.

    ``values`` may be (N,) or (N, K) for K functions sampled at the same
    points. Raises ``ValueError`` for an under-determined or ill-conditioned
    design.
    """
    B = sh_matrix(L, points)
    n, k = B.shape
    sv = np.linalg.svd(B, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if n < k or cond > cond_limit:
        raise ValueError(f"rank-deficient SH design: {n} samples for {k} coefficients, condition {cond:.3g}")
    values = np.asarray(values, dtype=float)
    coeffs, *_ = np.linalg.lstsq(B, values, rcond=None)
    resid = values - B @ coeffs
    return FitResult(coeffs.T if values.ndim > 1 else coeffs, float(np.sqrt(np.mean(resid**2))))


# ---------------------------------------------------------------------------
# meshes


def icosphere(level):
    """Vertices (unit) and triangles of an icosahedron subdivided ``level`` times."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}
        new_faces = []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(V), np.array(faces)


@lru_cache(maxsize=None)
def sphere_points(level=3):
    """Full antipodally symmetric icosphere point set (read-only)."""
    V, _ = icosphere(level)
    V.setflags(write=False)
    return V


def _canonical_mask(V, tol=1e-12):
    keep = np.zeros(len(V), dtype=bool)
    for i, v in enumerate(V):
        for c in v:
            if abs(c) > tol:
                keep[i] = c > 0
                break
    return keep


@dataclass
class SphereMesh:
    """Antipodally reduced sphere mesh with per-vertex neighbour lists."""

    vertices: np.ndarray
    neighbors: list

    def __post_init__(self):
        deg = max(len(n) for n in self.neighbors)
        pad = np.empty((len(self.vertices), deg), dtype=int)
        for i, nb in enumerate(self.neighbors):
            pad[i, : len(nb)] = nb
            pad[i, len(nb):] = nb[0]
        self.neighbor_table = pad


@lru_cache(maxsize=None)
def default_mesh(level=3):
    """Icosphere mesh (642 vertices at level 3) reduced to one hemisphere."""
    V, _ = icosphere(level)
    hull = ConvexHull(V)
    keep = _canonical_mask(V)
    # map each vertex to the reduced index of itself or its antipode
    reduced = np.flatnonzero(keep)
    lookup = {}
    for new, old in enumerate(reduced):
        lookup[old] = new
    antipode = np.argmin(np.linalg.norm(V[:, None, :] + V[None, :, :], axis=-1), axis=1)
    rep = np.array([lookup[i] if keep[i] else lookup[antipode[i]] for i in range(len(V))])
    nbrs = [set() for _ in reduced]
    for tri in hull.simplices:
        for a in tri:
            for b in tri:
                if rep[a] != rep[b]:
                    nbrs[rep[a]].add(rep[b])
    return SphereMesh(V[reduced], [np.array(sorted(n)) for n in nbrs])


# ---------------------------------------------------------------------------
# rotation, GFA


@lru_cache(maxsize=None)
def _refit_operator(L, level=3):
    P = sphere_points(level)
    return P, np.linalg.pinv(sh_matrix(L, P))


def rotate_sh(c, R):
    """Coefficients of ``(Rf)(u) = f(R^-1 u)`` by rotate-resample-refit.

    Exact for band-limited input: the rotated function is sampled on a fixed
    symmetric point set and refitted by least squares at the same order.
    """
    c = _coeffs(c)
    L = order_from_ncoeffs(c.shape[-1])
    P, pinv = _refit_operator(L)
    R = np.asarray(R, dtype=float)
    src = P @ R  # rows are R^T p
    vals = sh_matrix(L, src) @ c.T
    return (pinv @ vals).T


@lru_cache(maxsize=None)
def _a20_weights():
    P = sphere_points(1)
    B2 = sh_matrix(2, P)[:, 1:]
    return P, np.linalg.pinv(B2)[2]


def rotated_a20(c, R):
    """Rotated ``a_{2,0}`` from the l=2 coefficients only, for stacked rotations.

    ``c`` is (..., ncoef) and ``R`` is (..., 3, 3); the l=2 band is sampled
    after rotation on a small fixed point set and refitted.
    """
    c = _coeffs(c)
    P, w = _a20_weights()
    R = np.asarray(R, dtype=float)
    src = np.einsum("kj,...ji->...ki", P, R)  # R^T p_k
    B2 = sh_matrix(2, src)[..., 1:]
    vals = np.einsum("...kj,...j->...k", B2, c[..., 1:6])
    return vals @ w


def gfa(c):
    """Generalised fractional anisotropy ``sqrt(1 - c00^2 / sum c^2)``."""
    c = _coeffs(c)
    tot = np.sum(c * c, axis=-1)
    if np.any(tot == 0):
        raise ValueError("null function: all SH coefficients are zero")
    val = np.sqrt(np.clip(1.0 - c[..., 0] ** 2 / tot, 0.0, 1.0))
    return float(val) if np.ndim(val) == 0 else val


def gfa_map(C):
    """GFA per voxel; all-zero voxels map to 0."""
    C = np.asarray(C, dtype=float)
    tot = np.sum(C * C, axis=-1)
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(tot > 0, np.sqrt(np.clip(1.0 - C[..., 0] ** 2 / safe, 0.0, 1.0)), 0.0)


# ---------------------------------------------------------------------------
# tensor ODF


def check_spd(D):
    D = np.asarray(D, dtype=float)
    if D.shape[-2:] != (3, 3):
        raise ValueError("tensor must be 3x3")
    if not np.allclose(D, np.swapaxes(D, -1, -2), atol=1e-12 * max(1.0, float(np.max(np.abs(D))))):
        raise ValueError("tensor is not symmetric")
    if np.any(np.linalg.eigvalsh(D) <= 0):
        raise ValueError("tensor is not positive definite")
    return D


def tensor_odf(D, u):
    """ODF of a diffusion tensor: ``1 / (4 pi |D|^1/2 (u^T D^-1 u)^3/2)``.

    ``D`` is one 3x3 SPD matrix; ``u`` is (..., 3).
    """
    D = check_spd(D)
    u = np.asarray(u, dtype=float)
    Di = np.linalg.inv(D)
    q = np.einsum("...i,ij,...j->...", u, Di, u)
    return 1.0 / (4.0 * np.pi * np.sqrt(np.linalg.det(D)) * q**1.5)


def tensor_odf_batch(D, u):
    """Tensor ODFs for stacked tensors D (N, 3, 3) at shared points u (K, 3) -> (N, K)."""
    D = np.asarray(D, dtype=float)
    Di = np.linalg.inv(D)
    q = np.einsum("ki,nij,kj->nk", u, Di, u)
    det = np.linalg.det(D)
    return 1.0 / (4.0 * np.pi * np.sqrt(det)[:, None] * q**1.5)


@lru_cache(maxsize=None)
def _projection_operator(L, order):
    x, w = lebedev_rule(order)
    P = x.T.copy()
    return P, sh_matrix(L, P) * w[:, None]


def tensors_to_sh(D, L=DEFAULT_ORDER, quadrature_order=83):
    """SH coefficients of tensor ODFs for stacked tensors (..., 3, 3).

    Coefficients are inner products evaluated by Lebedev quadrature, so the
    result is the least-squares truncation on the whole sphere and ``c00``
    keeps the unit integral. The default rule is exact to rounding for
    eigenvalue ratios up to about 10.
    """
    D = np.asarray(D, dtype=float)
    shape = D.shape[:-2]
    flat = D.reshape(-1, 3, 3)
    if np.any(np.linalg.eigvalsh(flat) <= 0):
        raise ValueError("tensor field is not positive definite everywhere")
    P, BW = _projection_operator(L, quadrature_order)
    vals = tensor_odf_batch(flat, P)
    return (vals @ BW).reshape(shape + (n_coeffs(L),))


# ---------------------------------------------------------------------------
# peak detection


def _tangent_basis(u):
    pick = np.argmin(np.abs(u), axis=-1)
    e = np.eye(3)[pick]
    t1 = np.cross(u, e)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(u, t1)
    return t1, t2


def _eval_rows(C, pts, L):
    return np.einsum("nj,nj->n", sh_matrix(L, pts), C)


def _refine(C, U, L, step0=0.1, tol=1e-8, max_iter=100, newton_iter=4):
    """Gradient ascent on the sphere followed by a few Newton steps.

    ``C`` (M, ncoef) coefficient rows and ``U`` (M, 3) start points.
    """
    U = U.copy()
    f = _eval_rows(C, U, L)
    step = np.full(len(U), step0)
    active = np.ones(len(U), dtype=bool)
    h = 1e-6
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        u = U[idx]
        t1, t2 = _tangent_basis(u)
        cc = C[idx]
        g1 = (_eval_rows(cc, u + h * t1, L) - _eval_rows(cc, u - h * t1, L)) / (2 * h)
        g2 = (_eval_rows(cc, u + h * t2, L) - _eval_rows(cc, u - h * t2, L)) / (2 * h)
        g = g1[:, None] * t1 + g2[:, None] * t2
        gn = np.linalg.norm(g, axis=-1)
        flat = gn < 1e-14
        d = g / np.where(flat, 1.0, gn)[:, None]
        s = step[idx]
        trial = u * np.cos(s)[:, None] + d * np.sin(s)[:, None]
        ft = _eval_rows(cc, trial, L)
        up = (ft > f[idx]) & ~flat
        df = np.where(up, ft - f[idx], 0.0)
        U[idx[up]] = trial[up]
        f[idx[up]] = ft[up]
        step[idx[~up]] *= 0.5
        done = flat | (up & (df < tol)) | (step[idx] < 1e-12)
        active[idx[done]] = False
    # Newton polish in tangent coordinates
    hg, hh = 1e-5, 1e-3
    for _ in range(newton_iter):
        t1, t2 = _tangent_basis(U)

        def at(a, b):
            return _eval_rows(C, U + a * t1 + b * t2, L)

        f0 = at(0.0, 0.0)
        ga = (at(hg, 0) - at(-hg, 0)) / (2 * hg)
        gb = (at(0, hg) - at(0, -hg)) / (2 * hg)
        faa = (at(hh, 0) - 2 * f0 + at(-hh, 0)) / hh**2
        fbb = (at(0, hh) - 2 * f0 + at(0, -hh)) / hh**2
        fab = (at(hh, hh) - at(hh, -hh) - at(-hh, hh) + at(-hh, -hh)) / (4 * hh**2)
        det = faa * fbb - fab**2
        ok = (faa < 0) & (det > 0)
        da = np.where(ok, -(fbb * ga - fab * gb) / np.where(ok, det, 1.0), 0.0)
        db = np.where(ok, -(faa * gb - fab * ga) / np.where(ok, det, 1.0), 0.0)
        small = np.hypot(da, db) < 0.05
        move = ok & small
        cand = U + da[:, None] * t1 + db[:, None] * t2
        cand /= np.linalg.norm(cand, axis=-1, keepdims=True)
        fc = _eval_rows(C, cand, L)
        move &= fc >= f0 - 1e-13 * np.abs(f0)
        U[move] = cand[move]
    return U, _eval_rows(C, U, L)


def find_peaks(C, mesh=None, gfa_threshold=GFA_THRESHOLD, peak_ratio=PEAK_RATIO, max_peaks=None):
    """Peaks for stacked coefficient rows.

    Returns ``(dirs, vals)`` of shapes (N, K, 3) and (N, K), zero padded,
    sorted by descending ODF value; K is the largest peak count found (or
    ``max_peaks``).
    """
    mesh = mesh or default_mesh()
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C[None]
    L = order_from_ncoeffs(C.shape[-1])
    N = len(C)
    g = gfa_map(C)
    nonnull = np.sum(C * C, axis=-1) > 0
    active = np.flatnonzero(nonnull & (g >= gfa_threshold))
    per_voxel = [[] for _ in range(N)]
    if len(active):
        B = sh_matrix(L, mesh.vertices)
        F = C[active] @ B.T
        nb = F[:, mesh.neighbor_table]
        is_max = (F >= nb.max(axis=-1)) & (F > nb.min(axis=-1))
        fmax = F.max(axis=1, keepdims=True)
        is_max &= F >= 0.5 * peak_ratio * fmax
        # rounding noise on an isotropic function is not a peak
        spread = fmax - F.min(axis=1, keepdims=True)
        is_max &= spread > FLAT_RTOL * np.abs(F).max(axis=1, keepdims=True)
        rows, verts = np.nonzero(is_max)
        vox = active[rows]
        U, vals = _refine(C[vox], mesh.vertices[verts], L)
        cos_merge = np.cos(np.deg2rad(MERGE_ANGLE_DEG))
        order = np.lexsort((verts, -vals, vox))
        for k in order:
            per_voxel[vox[k]].append((vals[k], U[k]))
        for v in range(N):
            cands = per_voxel[v]
            kept = []
            for val, u in cands:
                if all(abs(u @ ku) < cos_merge for _, ku in kept):
                    kept.append((val, u))
            if kept:
                top = kept[0][0]
                kept = [(val, u) for val, u in kept if val >= peak_ratio * top]
            if max_peaks is not None:
                kept = kept[:max_peaks]
            per_voxel[v] = kept
    K = max([len(p) for p in per_voxel] + [0])
    if max_peaks is not None:
        K = max_peaks
    dirs = np.zeros((N, K, 3))
    vals = np.zeros((N, K))
    for v, kept in enumerate(per_voxel):
        for i, (val, u) in enumerate(kept):
            dirs[v, i] = _canon_rows(u)
            vals[v, i] = val
    return dirs, vals


def _canon_rows(u):
    for c in u:
        if abs(c) > 1e-12:
            return u if c > 0 else -u
    return u


def detect_peaks(c, mesh=None, gfa_threshold=GFA_THRESHOLD, peak_ratio=PEAK_RATIO, max_peaks=None):
    """ODF maxima of one voxel as weighted directors (axis, ODF value).

    Empty when GFA is below ``gfa_threshold``. Candidates are local maxima on
    the mesh, refined on the continuous sphere; antipodal and near duplicates
    (within 5 degrees) are merged and peaks below ``peak_ratio`` times the
    largest value are dropped. The first entry is the principal peak.
    """
    dirs, vals = find_peaks(_coeffs(c)[None], mesh, gfa_threshold, peak_ratio, max_peaks)
    return [WeightedDirector(d, w) for d, w in zip(dirs[0], vals[0]) if w != 0 or np.any(d)]
