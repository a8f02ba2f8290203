"""Lossless measurement transformations and (generalized) likelihoods.

Two analytical transformations are provided:

* type 1 -- noise whitening built from the full-rank decomposition H = B D,
  A = (B^T R^-1 B)^(-1/2) B^T R^-1, so the transformed noise covariance is
  the identity and only (z, H) need transmission;
* type 2 -- for H = [E, 0] with invertible E, A = E^-1, so the transformed
  measurement matrix is the constant [I, 0] and only (z, R) need
  transmission.

Likelihoods are evaluated in the log domain: products over ten sensors
underflow in the linear domain. The generalized likelihood uses the product
of nonzero eigenvalues and the pseudoinverse of the (possibly singular)
transformed covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InconsistentTransformError, InputError, NumericsError
from .linalg import (
    is_full_column_rank,
    matrix_rank_by_sv,
    psd_eig,
    sym_sqrt_and_invsqrt,
    symmetrize,
)
from .models import MeasurementModel

IDENTITY = "identity"
TYPE1 = "type1"
TYPE2 = "type2"
GENERIC = "generic"

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Transformation:
    """A full-column-rank left transformation of one sensor's measurements."""

    A: np.ndarray
    kind: str
    Ht: np.ndarray
    Rt: np.ndarray
    sqrt_det_ata: float = field(init=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.Ht = np.atleast_2d(np.asarray(self.Ht, dtype=float))
        self.Rt = symmetrize(np.atleast_2d(np.asarray(self.Rt, dtype=float)))
        sv = np.linalg.svd(self.A, compute_uv=False)
        if self.A.shape[0] < self.A.shape[1] or sv[-1] <= 1e-10 * sv[0]:
            raise InputError("transformation matrix must have full column rank")
        self.sqrt_det_ata = float(np.prod(sv))

    def apply(self, zs: np.ndarray) -> np.ndarray:
        """Transform measurements; zs is (M, m) row-wise or a single vector."""
        zs = np.asarray(zs, dtype=float)
        if zs.ndim == 1:
            return self.A @ zs
        return zs @ self.A.T


def full_rank_decomposition(H: np.ndarray, rtol: float = 1e-10):
    """Split H (m x n, rank r) into B (m x r) times D (r x n).

    Column-pivoted QR; when H already has full row rank, B = I and D = H so
    the decomposition is permutation-free.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    m = H.shape[0]
    r = matrix_rank_by_sv(H, rtol)
    if r == 0:
        raise InputError("H has rank zero")
    if r == m:
        return np.eye(m), H.copy()
    q, rr, piv = scipy.linalg.qr(H, pivoting=True)
    perm = np.empty_like(piv)
    perm[piv] = np.arange(piv.size)
    return q[:, :r], rr[:r, :][:, perm]


def make_identity(model: MeasurementModel) -> Transformation:
    """No-op transformation (payload identical to raw)."""
    eye = np.eye(model.m)
    return Transformation(eye, IDENTITY, model.H.copy(), model.R.copy())


def make_type1(model: MeasurementModel) -> Transformation:
    """Whitening transformation: Rt = I, Ht = (B^T R^-1 B)^(1/2) D."""
    b, d = full_rank_decomposition(model.H)
    r_inv = np.linalg.inv(model.R)
    core = symmetrize(b.T @ r_inv @ b)
    if np.min(np.linalg.eigvalsh(core)) <= 1e-12 * np.max(np.linalg.eigvalsh(core)):
        raise NumericsError("B^T R^-1 B is rank deficient")
    sq, isq = sym_sqrt_and_invsqrt(core)
    a = isq @ b.T @ r_inv
    ht = sq @ d
    return Transformation(a, TYPE1, ht, np.eye(ht.shape[0]))


def make_type2(model: MeasurementModel) -> Transformation:
    """Leading-block inverse for H = [E, 0]: Ht = [I, 0], Rt = E^-1 R E^-T."""
    m, n = model.m, model.n
    e = model.H[:, :m]
    tail = model.H[:, m:]
    if tail.size and np.max(np.abs(tail)) > 1e-12:
        raise InputError("H is not of the [E, 0] shape")
    if matrix_rank_by_sv(e) < m:
        raise InputError("leading block of H is singular")
    a = np.linalg.inv(e)
    ht = np.hstack([np.eye(m), np.zeros((m, n - m))])
    rt = symmetrize(a @ model.R @ a.T)
    return Transformation(a, TYPE2, ht, rt)


def make_generic(A: np.ndarray, model: MeasurementModel) -> Transformation:
    """Arbitrary full-column-rank transformation; Rt = A R A^T may be singular."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not is_full_column_rank(A):
        raise InputError("A must have full column rank")
    return Transformation(A, GENERIC, A @ model.H, symmetrize(A @ model.R @ A.T))


def gaussian_log_likelihood(z: np.ndarray, z_hat: np.ndarray, S: np.ndarray) -> float:
    """log N(z; z_hat, S) for positive-definite S."""
    z = np.asarray(z, dtype=float).reshape(-1)
    z_hat = np.asarray(z_hat, dtype=float).reshape(-1)
    S = symmetrize(np.atleast_2d(np.asarray(S, dtype=float)))
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericsError("likelihood covariance is not positive definite") from exc
    d = z - z_hat
    y = np.linalg.solve(c, d)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return -0.5 * (z.size * LOG_2PI + logdet + float(y @ y))


def gaussian_likelihood(z, z_hat, S) -> float:
    return math.exp(gaussian_log_likelihood(z, z_hat, S))


def generalized_log_likelihood(zt: np.ndarray, zt_hat: np.ndarray,
                               St: np.ndarray) -> float:
    """Generalized Gaussian log-density with a PSD covariance.

    Uses the product of the nonzero eigenvalues of St and the pseudoinverse
    quadratic form. The residual must lie in the range of St (up to 1e-8
    relative); a violation means the payload was not produced by a
    consistent linear transformation.
    """
    zt = np.asarray(zt, dtype=float).reshape(-1)
    zt_hat = np.asarray(zt_hat, dtype=float).reshape(-1)
    St = np.atleast_2d(np.asarray(St, dtype=float))
    w, v, rank = psd_eig(St)
    if rank == 0:
        raise NumericsError("transformed covariance has rank zero")
    d = zt - zt_hat
    proj = v.T @ d
    resid = d - v @ proj
    dn = float(np.linalg.norm(d))
    if dn > 0 and float(np.linalg.norm(resid)) > 1e-8 * dn:
        raise InconsistentTransformError(
            "residual is outside the range of the transformed covariance")
    quad = float(np.sum(proj * proj / w))
    return -0.5 * (rank * LOG_2PI + float(np.sum(np.log(w))) + quad)


def generalized_likelihood(zt, zt_hat, St) -> float:
    return math.exp(generalized_log_likelihood(zt, zt_hat, St))


@dataclass
class ClutterModel:
    """Poisson clutter, uniform over a surveillance volume."""

    rate: float
    region_volume: float

    def __post_init__(self):
        if self.rate < 0 or self.region_volume <= 0:
            raise InputError("clutter rate must be >= 0 and volume > 0")

    @property
    def density(self) -> float:
        return 1.0 / self.region_volume

    @property
    def log_density(self) -> float:
        return -math.log(self.region_volume)


def clutter_density_transformed(clutter: ClutterModel,
                                transformation: Transformation) -> ClutterModel:
    """Clutter model in the transformed measurement space.

    A full-column-rank A scales the uniform region's volume by the product
    of its singular values, sqrt(det(A^T A)).
    """
    return ClutterModel(clutter.rate,
                        clutter.region_volume * transformation.sqrt_det_ata)
