"""Linear-Gaussian dynamics / measurement models and Kalman-style updates.

The fusion center consumes *effective* measurement models (H, R): either the
sensor's raw model or its transformed counterpart. The raw update is the
textbook covariance-form Kalman filter; the transformed update switches to
the information form with a pseudoinverse whenever the transformed noise
covariance is singular, which preserves exact equivalence with the raw route
for any full-column-rank transformation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, NumericsError
from .linalg import inv_spd, pinv_psd, symmetrize


@dataclass
class MotionModel:
    """State transition matrix F and process-noise covariance Q."""

    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.Q = symmetrize(np.asarray(self.Q, dtype=float))
        if self.F.ndim != 2 or self.F.shape[0] != self.F.shape[1]:
            raise ConfigError("F must be square")
        if self.Q.shape != self.F.shape:
            raise ConfigError("Q must match F")
        if np.min(np.linalg.eigvalsh(self.Q)) < -1e-10:
            raise ConfigError("Q must be positive semidefinite")

    @property
    def n(self) -> int:
        return self.F.shape[0]


@dataclass
class MeasurementModel:
    """Measurement matrix H (m x n) and noise covariance R (m x m)."""

    H: np.ndarray
    R: np.ndarray
    sensor_id: int = 0

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R = symmetrize(np.atleast_2d(np.asarray(self.R, dtype=float)))
        if self.R.shape != (self.H.shape[0], self.H.shape[0]):
            raise ConfigError("R must be m x m for H with m rows")
        if np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ConfigError("R must be positive definite")

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]


@dataclass
class GaussianEstimate:
    """State mean and covariance at a scan index."""

    mean: np.ndarray
    cov: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = symmetrize(np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ConfigError("covariance does not match state dimension")


@dataclass
class MeasurementBatch:
    """One sensor's per-scan payload as seen by the fusion center.

    `zs` has one row per track measurement; H and R are the effective model
    for this payload (raw or transformed). `kind` is one of "raw", "type1",
    "type2", "generic" and drives the likelihood route downstream.
    """

    sensor_id: int
    zs: np.ndarray
    H: np.ndarray
    R: np.ndarray
    kind: str = "raw"

    def __post_init__(self):
        self.zs = np.atleast_2d(np.asarray(self.zs, dtype=float))
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R = symmetrize(np.atleast_2d(np.asarray(self.R, dtype=float)))
        if self.zs.size == 0:
            self.zs = np.zeros((0, self.H.shape[0]))
        if self.zs.shape[1] != self.H.shape[0]:
            raise ConfigError("measurement dimension does not match H")

    @property
    def transformed(self) -> bool:
        return self.kind != "raw"

    @property
    def n_meas(self) -> int:
        return self.zs.shape[0]


def predict(est: GaussianEstimate, model: MotionModel) -> GaussianEstimate:
    """One-step prediction: mean' = F mean, cov' = F cov F^T + Q."""
    if model.n != est.mean.size:
        raise ConfigError("motion model dimension does not match estimate")
    mean = model.F @ est.mean
    cov = symmetrize(model.F @ est.cov @ model.F.T + model.Q)
    return GaussianEstimate(mean, cov, est.timestamp + 1)


def innovation(est_pred: GaussianEstimate, model: MeasurementModel):
    """Predicted measurement and innovation covariance (H mean, H P H^T + R)."""
    if model.n != est_pred.mean.size:
        raise ConfigError("measurement model dimension does not match estimate")
    z_hat = model.H @ est_pred.mean
    s = symmetrize(model.H @ est_pred.cov @ model.H.T + model.R)
    return z_hat, s


def update_raw(est_pred: GaussianEstimate, z: np.ndarray,
               model: MeasurementModel) -> GaussianEstimate:
    """Covariance-form Kalman update with a raw measurement."""
    z = np.asarray(z, dtype=float).reshape(-1)
    z_hat, s = innovation(est_pred, model)
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericsError(f"innovation covariance ill-conditioned (cond={cond:.3e})")
    gain = est_pred.cov @ model.H.T @ inv_spd(s, "innovation covariance")
    mean = est_pred.mean + gain @ (z - z_hat)
    i_kh = np.eye(est_pred.mean.size) - gain @ model.H
    cov = symmetrize(i_kh @ est_pred.cov @ i_kh.T + gain @ model.R @ gain.T)
    return GaussianEstimate(mean, cov, est_pred.timestamp)


def update_transformed(est_pred: GaussianEstimate, zt: np.ndarray,
                       Ht: np.ndarray, Rt: np.ndarray) -> GaussianEstimate:
    """Update with a transformed measurement zt = A z, Ht = A H, Rt = A R A^T.

    Rt may be singular (generic full-column-rank A); the information form
    with the Moore-Penrose pseudoinverse of Rt is used in that case and
    reproduces the raw update exactly. A nonsingular Rt takes the plain
    covariance-form route.
    """
    zt = np.asarray(zt, dtype=float).reshape(-1)
    Ht = np.atleast_2d(np.asarray(Ht, dtype=float))
    Rt = symmetrize(np.atleast_2d(np.asarray(Rt, dtype=float)))
    eigs = np.linalg.eigvalsh(Rt)
    if np.min(eigs) < -1e-8 * max(np.max(eigs), 1e-300):
        raise InputError("transformed noise covariance has a negative eigenvalue")
    nonsingular = np.min(eigs) > 1e-12 * np.max(eigs)
    if nonsingular:
        return update_raw(est_pred, zt, MeasurementModel(Ht, Rt))
    rt_pinv = pinv_psd(Rt)
    info_prior = inv_spd(est_pred.cov, "prior covariance")
    info = symmetrize(info_prior + Ht.T @ rt_pinv @ Ht)
    ivec = info_prior @ est_pred.mean + Ht.T @ rt_pinv @ zt
    cov = inv_spd(info, "posterior information")
    return GaussianEstimate(cov @ ivec, cov, est_pred.timestamp)
