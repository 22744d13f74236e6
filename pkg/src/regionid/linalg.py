"""Small dense linear algebra for matrices with two columns.

Every constraint block in this package is K x 2 (one row per obstacle, two
velocity components), so the SVD is computed in closed form from the 2x2
Gram matrix instead of calling a general-purpose routine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class ThinSvd:
    """Factors of ``A = U diag(s) V^T`` for a K x 2 matrix ``A``.

    ``U`` is a full K x K orthogonal matrix so that its trailing columns give
    an orthonormal basis of the left null space. ``singular_values`` has
    ``min(K, 2)`` entries in non-increasing order and ``V`` is 2 x 2.
    """

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], 2)

    def reconstruct(self) -> np.ndarray:
        k = len(self.singular_values)
        return (self.U[:, :k] * self.singular_values) @ self.V[:, :k].T


def as_matkx2(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 2)
    if A.ndim != 2 or A.shape[1] != 2:
        raise ValueError(f"expected a K x 2 matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def rotate90(v) -> np.ndarray:
    """Counterclockwise quarter turn, (x, y) -> (-y, x)."""
    v = np.asarray(v, dtype=float)
    return np.array([-v[1], v[0]])


def _fix_sign(col: np.ndarray) -> np.ndarray:
    # first entry that is not ~0 is made positive
    scale = np.max(np.abs(col)) if col.size else 0.0
    for c in col:
        if abs(c) > 1e-12 * scale:
            return col if c > 0 else -col
    return col


def _top_eigvec(p: float, q: float, r: float, lam: float) -> np.ndarray:
    # eigenvector of [[p, q], [q, r]] for eigenvalue lam; pick the better
    # conditioned of the two candidate null vectors of (G - lam I)
    c1 = np.array([lam - r, q])
    c2 = np.array([q, lam - p])
    v = c1 if np.linalg.norm(c1) >= np.linalg.norm(c2) else c2
    n = np.linalg.norm(v)
    if n == 0.0:
        return np.array([1.0, 0.0])
    return v / n


def _complete_basis(cols: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal K x K matrix whose leading columns are ``cols``."""
    r = cols.shape[1]
    if r == 0:
        return np.eye(k)
    Q, _ = np.linalg.qr(cols, mode="complete")
    out = Q.copy()
    out[:, :r] = cols
    for j in range(r, k):
        out[:, j] = _fix_sign(out[:, j])
    return out


def thin_svd(A) -> ThinSvd:
    """Closed-form SVD of a K x 2 matrix.

    Singular values come from the eigenvalues of ``A^T A``. The smaller one is
    recovered through ``s1 * s2 = sqrt(sum of squared 2x2 minors)`` so that
    exactly parallel rows give an exact zero instead of a rounding residue.
    V columns follow the convention "first nonzero entry positive"; for a
    single row this makes ``V2`` equal to the quarter-turned ``V1`` up to sign.
    """
    A = as_matkx2(A)
    k = A.shape[0]
    if k == 0:
        raise ValueError("thin_svd needs at least one row")
    nsv = min(k, 2)

    p = float(A[:, 0] @ A[:, 0])
    q = float(A[:, 0] @ A[:, 1])
    r = float(A[:, 1] @ A[:, 1])
    if p == 0.0 and q == 0.0 and r == 0.0:
        return ThinSvd(U=np.eye(k), singular_values=np.zeros(nsv), V=np.eye(2))

    half = 0.5 * (p - r)
    lam1 = 0.5 * (p + r) + np.hypot(half, q)
    s1 = np.sqrt(lam1)

    # Cauchy-Binet: det(A^T A) = sum over row pairs of (cross product)^2
    cross = np.outer(A[:, 0], A[:, 1]) - np.outer(A[:, 1], A[:, 0])
    minors = cross[np.triu_indices(k, 1)]
    s2 = float(np.sqrt(np.sum(minors * minors))) / s1 if k >= 2 else 0.0
    s2 = min(s2, s1)

    v1 = _fix_sign(_top_eigvec(p, q, r, lam1))
    v2 = _fix_sign(rotate90(v1))
    V = np.column_stack([v1, v2])

    u_cols = [A @ v1 / s1]
    if k >= 2 and s2 > 0.0:
        u2 = A @ v2 / s2
        # re-orthogonalize against u1; matters only when s2 << s1
        u2 = u2 - (u_cols[0] @ u2) * u_cols[0]
        n2 = np.linalg.norm(u2)
        if n2 > 0.0:
            u_cols.append(u2 / n2)
    U = _complete_basis(np.column_stack(u_cols), k)

    sv = np.array([s1, s2][:nsv])
    return ThinSvd(U=U, singular_values=sv, V=V)


def rank_with_tol(svd: ThinSvd, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    s = svd.singular_values
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def pseudoinverse(A, rcond: float = 1e-13) -> np.ndarray:
    """Moore-Penrose pseudoinverse (2 x K) via :func:`thin_svd`."""
    A = as_matkx2(A)
    svd = thin_svd(A)
    s = svd.singular_values
    out = np.zeros((2, A.shape[0]))
    if s[0] == 0.0:
        return out
    for i, si in enumerate(s):
        if si > rcond * s[0]:
            out += np.outer(svd.V[:, i], svd.U[:, i]) / si
    return out
