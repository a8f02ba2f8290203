"""Small shared linear-algebra helpers.

Rank decisions everywhere use a relative cutoff of 1e-12 times the largest
singular value / eigenvalue, so "nonzero eigenvalues" means the same thing
in every module.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericsError

RANK_RTOL = 1e-12


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^T)/2; applied after every covariance arithmetic step."""
    return 0.5 * (m + m.T)


def psd_eig(m: np.ndarray, rtol: float = RANK_RTOL):
    """Eigendecomposition of a symmetric PSD matrix.

    Returns (nonzero eigenvalues, matching eigenvectors, rank). Eigenvalues
    below rtol * max are treated as zero. Raises NumericsError if a clearly
    negative eigenvalue is present.
    """
    w, v = np.linalg.eigh(symmetrize(m))
    wmax = float(np.max(w)) if w.size else 0.0
    if wmax <= 0.0:
        if w.size and np.min(w) < -rtol:
            raise NumericsError("matrix has negative eigenvalues")
        return np.empty(0), np.empty((m.shape[0], 0)), 0
    cutoff = rtol * wmax
    if np.min(w) < -1e-8 * wmax:
        raise NumericsError(f"matrix not PSD (min eig {np.min(w):.3e})")
    keep = w > cutoff
    return w[keep], v[:, keep], int(np.count_nonzero(keep))


def pinv_psd(m: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix via eigh."""
    w, v, _ = psd_eig(m, rtol)
    if w.size == 0:
        return np.zeros_like(np.asarray(m, dtype=float))
    return symmetrize((v / w) @ v.T)


def inv_spd(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    try:
        c = np.linalg.cholesky(symmetrize(m))
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"{what} is not positive definite") from exc
    ident = np.eye(m.shape[0])
    ci = np.linalg.solve(c, ident)
    return symmetrize(ci.T @ ci)


def chol_logdet_and_solve(s: np.ndarray, d: np.ndarray, what: str = "covariance"):
    """Return (log det S, S^-1 d) for SPD S; d may be (m,) or (m, k)."""
    try:
        c = np.linalg.cholesky(symmetrize(s))
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"{what} is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    y = np.linalg.solve(c, d)
    return logdet, np.linalg.solve(c.T, y)


def sym_sqrt_and_invsqrt(m: np.ndarray, clamp: float = 1e-14):
    """Symmetric square root and inverse square root of an SPD matrix.

    Eigenvalues are clamped at `clamp` before the inverse root so that a
    barely-PD input yields a deterministic, symmetric result.
    """
    w, v = np.linalg.eigh(symmetrize(m))
    if np.max(w) <= 0:
        raise NumericsError("matrix has no positive eigenvalues")
    w = np.maximum(w, clamp)
    sq = symmetrize((v * np.sqrt(w)) @ v.T)
    isq = symmetrize((v / np.sqrt(w)) @ v.T)
    return sq, isq


def matrix_rank_by_sv(a: np.ndarray, rtol: float = 1e-10) -> int:
    """Rank via singular values with a relative threshold."""
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > rtol * sv[0]))


def is_full_column_rank(a: np.ndarray, rtol: float = 1e-10) -> bool:
    a = np.atleast_2d(a)
    return a.shape[0] >= a.shape[1] and matrix_rank_by_sv(a, rtol) == a.shape[1]
