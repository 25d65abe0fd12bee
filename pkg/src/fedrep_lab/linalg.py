"""Dense linear-algebra kernel.

QR with a fixed sign convention, least squares, singular values and the
principal angle distance between column spaces. Everything here is a pure
function of its inputs.
"""
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, RankDeficient

__all__ = [
    "RANK_RTOL",
    "QrResult",
    "qr_decompose",
    "orthonormalize",
    "least_squares",
    "min_norm_least_squares",
    "singular_values",
    "orthonormal_complement",
    "principal_angle_distance",
    "is_orthonormal",
    "is_row_incoherent",
]

# relative singular-value cutoff used for every rank decision
RANK_RTOL = 1e-12


class QrResult(NamedTuple):
    q: np.ndarray
    r: np.ndarray


def _as_matrix(a, name="a"):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def singular_values(a):
    """Singular values of `a` in descending order (``min(rows, cols)`` of them)."""
    return np.linalg.svd(_as_matrix(a), compute_uv=False)


def _check_full_column_rank(a, name="a"):
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient(
            f"{name} ({a.shape[0]}x{a.shape[1]}) is numerically rank deficient "
            f"(sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e})"
        )


def qr_decompose(a):
    """Thin Householder QR of a full-column-rank matrix.

    The diagonal of ``r`` is made nonnegative by flipping column signs of
    ``q``, which pins down the factorization uniquely.

    Parameters
    ----------
    a : array_like, shape (m, n), m >= n

    Returns
    -------
    QrResult
        ``q`` with orthonormal columns (m x n) and upper triangular ``r``
        (n x n) with ``q @ r == a``.

    Raises
    ------
    RankDeficient
        If ``m < n`` or the smallest singular value is below
        ``RANK_RTOL`` times the largest.
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m < n:
        raise RankDeficient(f"need rows >= cols for a full-rank QR, got {a.shape}")
    _check_full_column_rank(a)
    # LAPACK geqrf is Householder based
    q, r = np.linalg.qr(a, mode="reduced")
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return QrResult(q * signs, r * signs[:, None])


def orthonormalize(a):
    """Orthonormal basis for span(a): the ``q`` factor of :func:`qr_decompose`."""
    return qr_decompose(a).q


def least_squares(a, b):
    """Solve ``min_X ||a X - b||_F`` for full-column-rank `a` via QR.

    `b` may be a vector, in which case a vector is returned.
    """
    b_arr = np.asarray(b, dtype=float)
    vector_rhs = b_arr.ndim == 1
    a = _as_matrix(a)
    b_mat = _as_matrix(b_arr, "b")
    if b_mat.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"a has {a.shape[0]} rows but b has {b_mat.shape[0]}")
    q, r = qr_decompose(a)
    x = solve_triangular(r, q.T @ b_mat, lower=False)
    return x[:, 0] if vector_rhs else x


def min_norm_least_squares(a, b):
    """Minimum-norm least-squares solution, valid for any rank.

    Singular values below ``RANK_RTOL * sigma_max`` are treated as zero.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    x, *_ = np.linalg.lstsq(a, np.asarray(b, dtype=float), rcond=RANK_RTOL)
    return x


def orthonormal_complement(b):
    """Orthonormal basis of the orthogonal complement of span(b).

    `b` is d x k with d > k; the result is d x (d - k).
    """
    b = _as_matrix(b, "b")
    d, k = b.shape
    if d <= k:
        raise DimensionMismatch(f"complement of a {d}x{k} basis is empty")
    q_full, _ = np.linalg.qr(b, mode="complete")
    return q_full[:, k:]


def principal_angle_distance(b1, b2):
    """Sine of the largest principal angle between span(b1) and span(b2).

    Both inputs are orthonormalized first, so any full-rank bases may be
    passed. Returns ``||C1^T Q2||_2`` where ``C1`` spans the complement of
    span(b1) and ``Q2`` is an orthonormal basis of span(b2).
    """
    b1 = _as_matrix(b1, "b1")
    b2 = _as_matrix(b2, "b2")
    if b1.shape != b2.shape:
        raise DimensionMismatch(f"shapes differ: {b1.shape} vs {b2.shape}")
    q1 = orthonormalize(b1)
    q2 = orthonormalize(b2)
    if b1.shape[0] == b1.shape[1]:
        # both span the whole space
        return 0.0
    comp = orthonormal_complement(q1)
    val = np.linalg.norm(comp.T @ q2, 2)
    return float(min(val, 1.0))


def is_orthonormal(b, atol=1e-10):
    b = np.asarray(b, dtype=float)
    return bool(np.max(np.abs(b.T @ b - np.eye(b.shape[1]))) <= atol)


def is_row_incoherent(m, mu=1.0, atol=1e-10):
    """Row-wise incoherence: ``max_i ||m_i|| <= mu sqrt(d2/d1) ||m||_F``.

    `m` is d1 x d2. A small absolute slack absorbs round-off when the
    inequality is tight (equal row norms with ``mu = 1``).
    """
    m = _as_matrix(m, "m")
    d1, d2 = m.shape
    lhs = np.max(np.linalg.norm(m, axis=1))
    rhs = mu * np.sqrt(d2) / np.sqrt(d1) * np.linalg.norm(m)
    return bool(lhs <= rhs * (1.0 + atol))
