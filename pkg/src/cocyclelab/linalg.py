"""Dense linear algebra primitives: SVD, exterior powers, Grassmannian
distance, principal angles, subspace intersection, and ratio norms.

Dimensions are capped at 8; exterior powers live in C(8,4)=70 dimensions at
most, so dense LAPACK routines meet every stated tolerance.
"""

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

MAX_DIM = 8


def _check_matrix(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix expected")
    if A.shape[0] > MAX_DIM:
        raise ValueError(f"dimension {A.shape[0]} exceeds cap {MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    return A


def svd(A):
    """(left, singular_values, right) with A = left @ diag(s) @ right.T."""
    A = _check_matrix(A)
    u, s, vt = np.linalg.svd(A)
    return u, s, vt.T


def exterior_power(A, i):
    """i-th compound matrix: entries are i x i minors in lexicographic basis."""
    A = _check_matrix(A)
    d = A.shape[0]
    if not 1 <= i <= d:
        raise ValueError("need 1 <= i <= d")
    if i == 1:
        return A.copy()
    subsets = list(combinations(range(d), i))
    m = comb(d, i)
    out = np.empty((m, m))
    for a, rows in enumerate(subsets):
        for b, cols in enumerate(subsets):
            out[a, b] = np.linalg.det(A[np.ix_(rows, cols)])
    return out


@dataclass(frozen=True)
class Subspace:
    """Subspace of R^d given by an orthonormal d x k basis."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if b.ndim != 2:
            raise ValueError("basis must be a d x k array")
        gram = b.T @ b
        if not np.allclose(gram, np.eye(b.shape[1]), atol=1e-10):
            raise ValueError("basis columns must be orthonormal within 1e-10")
        b = b.copy()
        b.flags.writeable = False
        object.__setattr__(self, "basis", b)

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def ambient(self):
        return self.basis.shape[0]

    @staticmethod
    def from_spanning(vectors, tol=1e-12):
        """Orthonormalize a spanning set (columns); drops null directions."""
        v = np.atleast_2d(np.asarray(vectors, dtype=float))
        q, r = np.linalg.qr(v)
        keep = np.abs(np.diag(r)) > tol * max(1.0, np.abs(r).max())
        return Subspace(q[:, keep])

    @staticmethod
    def axes(d, idx):
        b = np.zeros((d, len(idx)))
        for j, i in enumerate(idx):
            b[i, j] = 1.0
        return Subspace(b)


def grassmann_distance(U, V):
    """max over unit u in U of || projection of u onto V^perp ||."""
    if U.dim != V.dim:
        raise ValueError("grassmann_distance needs equal dimensions")
    bu, bv = U.basis, V.basis
    proj = bu - bv @ (bv.T @ bu)
    return float(min(1.0, np.linalg.svd(proj, compute_uv=False)[0]))


def min_principal_angle(U, V):
    """Smallest principal angle in [0, pi/2] between U and V."""
    if U.dim + V.dim > U.ambient:
        raise ValueError("dim U + dim V must not exceed the ambient dimension")
    s = np.linalg.svd(U.basis.T @ V.basis, compute_uv=False)
    c = min(1.0, max(-1.0, s[0] if len(s) else 0.0))
    return float(np.arccos(c))


def intersect(U, V, tol=1e-8):
    """Orthonormal basis of the intersection of U and V, computed as the
    null space of the stacked complement projectors."""
    d = U.ambient
    pu = np.eye(d) - U.basis @ U.basis.T
    pv = np.eye(d) - V.basis @ V.basis.T
    stacked = np.vstack([pu, pv])
    _, s, vt = np.linalg.svd(stacked)
    keep = s < tol
    basis = vt[keep].T
    if basis.shape[1] == 0:
        return Subspace(np.zeros((d, 0)))
    return Subspace.from_spanning(basis)


def ratio_norm(P, Q):
    """sup over coefficient vectors c of ||P c|| / ||Q c|| via thin QR of Q."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError("P and Q must have the same shape")
    _, r = np.linalg.qr(Q)
    k = Q.shape[1]
    if np.abs(np.diag(r)).min() <= 1e-14 * max(1.0, np.abs(r).max()):
        raise ValueError("Q is rank deficient")
    return float(np.linalg.norm(P @ np.linalg.inv(r), ord=2))


def operator_norm(A):
    return float(np.linalg.norm(A, ord=2))
