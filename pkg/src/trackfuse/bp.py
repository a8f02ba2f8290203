"""Scalable BP-based multisensor association and fusion.

Each scan is processed sensor by sensor: measurement evaluation builds the
target->association factors (beta) and the newborn factors (xi), a fixed
number of message-passing iterations produces the association products
kappa and iota, and the particle beliefs are reweighted, normalized and
augmented with one potential newborn per measurement.

The association messages have a two-value structure (a measurement-to-target
message takes one value at "assigned to me" and a common value everywhere
else), so the recursions are run on (eq, neq) pairs; the full vectors are
reconstructable for inspection. Messages are renormalized by their maximum
entry every iteration, a global scale that cancels in the belief updates.

The r = 0 component of a belief is carried as the scalar 1 - r_prob; the
dummy pdf for nonexistent newborns integrates to one and never needs
particles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import DegenerateBeliefError, InputError
from .linalg import pinv_psd, psd_eig, symmetrize
from .models import MeasurementBatch, MotionModel
from .transform import ClutterModel

LOG_2PI = math.log(2.0 * math.pi)
POS_DIM = 2


@dataclass
class ParticleBelief:
    """Weighted particle set for one potential target.

    Weights sum to the existence probability r_prob; the complementary
    1 - r_prob mass is implicit.
    """

    particles: np.ndarray
    weights: np.ndarray
    r_prob: float
    label: object
    missed_scans: int = 0

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.size != self.particles.shape[0]:
            raise InputError("weights do not match particle count")

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    def mean(self) -> np.ndarray:
        total = float(np.sum(self.weights))
        if total <= 0:
            return self.particles.mean(axis=0)
        return (self.weights @ self.particles) / total


@dataclass
class BpConfig:
    iterations: int = 10
    n_particles: int = 1000
    declare_threshold: float = 0.7
    prune_threshold: float = 1e-6
    max_missed_scans: int = 3
    birth_rate: float = 0.1
    survival_prob: float = 0.999
    vel_prior_std: float = 10.0
    birth_cov_inflation: float = 4.0
    gate_prob: float = 1.0 - 1e-6
    resample_ess_frac: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.prune_threshold < self.declare_threshold < 1.0):
            raise InputError("need 0 < P_pr < P_th < 1")
        if self.iterations < 1:
            raise InputError("need at least one message-passing iteration")


@dataclass
class BpSensorInput:
    """One sensor's payload plus its detection/clutter context."""

    batch: MeasurementBatch
    p_d: float
    clutter: ClutterModel
    detect_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def detection_probs(self, positions: np.ndarray) -> np.ndarray:
        if self.detect_fn is None:
            return np.full(positions.shape[0], self.p_d)
        return self.detect_fn(positions)


@dataclass
class AssociationMessages:
    """Factors and messages for one sensor step.

    beta is (N, M+1) over a in {0..M}; xi is (M, N+1) over b in {0..N}.
    nu_eq/nu_neq are (M, N): the measurement->target message at a = i and at
    every other a. phi_eq/phi_neq are (N, M) analogously over b. kappa and
    iota are the final products, normalized per row.
    """

    beta: np.ndarray
    xi: np.ndarray
    nu_eq: Optional[np.ndarray] = None
    nu_neq: Optional[np.ndarray] = None
    phi_eq: Optional[np.ndarray] = None
    phi_neq: Optional[np.ndarray] = None
    kappa: Optional[np.ndarray] = None
    iota: Optional[np.ndarray] = None

    def nu_vector(self, i: int, tau: int) -> np.ndarray:
        m = self.beta.shape[1] - 1
        vec = np.full(m + 1, self.nu_neq[i, tau])
        vec[i + 1] = self.nu_eq[i, tau]
        return vec

    def phi_vector(self, tau: int, i: int) -> np.ndarray:
        n = self.xi.shape[1] - 1
        vec = np.full(n + 1, self.phi_neq[tau, i])
        vec[tau + 1] = self.phi_eq[tau, i]
        return vec


class _BatchLikelihood:
    """Vectorized per-particle measurement log-likelihoods for one batch."""

    def __init__(self, batch: MeasurementBatch):
        self.batch = batch
        self.H = batch.H
        if batch.transformed:
            w, v, rank = psd_eig(batch.R)
            self._w, self._v, self._rank = w, v, rank
            self._logdet = float(np.sum(np.log(w)))
        else:
            c = np.linalg.cholesky(symmetrize(batch.R))
            self._chol = c
            self._rank = batch.R.shape[0]
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(c))))

    @property
    def dof(self) -> int:
        return self._rank

    def loglik(self, z: np.ndarray, particles: np.ndarray) -> np.ndarray:
        diffs = z - particles @ self.H.T
        if self.batch.transformed:
            proj = diffs @ self._v
            quad = np.sum(proj * proj / self._w, axis=1)
        else:
            y = np.linalg.solve(self._chol, diffs.T)
            quad = np.sum(y * y, axis=0)
        return -0.5 * (self._rank * LOG_2PI + self._logdet + quad)

    def gate_quadforms(self, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis of every measurement from the belief summary."""
        z_hat = self.H @ mean
        s = symmetrize(self.H @ cov @ self.H.T + self.batch.R)
        diffs = self.batch.zs - z_hat
        w, v, _ = psd_eig(s)
        proj = diffs @ v
        return np.sum(proj * proj / w, axis=1)


def bp_predict(beliefs: Sequence[ParticleBelief], motion: MotionModel,
               survival_prob: float, rng: np.random.Generator):
    """Propagate particles through the motion model and decay existence."""
    w, v = np.linalg.eigh(motion.Q)
    sqrt_q = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    out = []
    for b in beliefs:
        noise = rng.standard_normal(b.particles.shape) @ sqrt_q.T
        particles = b.particles @ motion.F.T + noise
        out.append(ParticleBelief(particles, b.weights * survival_prob,
                                  b.r_prob * survival_prob, b.label,
                                  b.missed_scans))
    return out


def propose_births(inp: BpSensorInput, cfg: BpConfig, state_dim: int,
                   rng: np.random.Generator):
    """Measurement-driven birth particle clouds, one per measurement.

    Positions are drawn around the WLS backprojection of the measurement
    with the backprojection covariance inflated by cfg.birth_cov_inflation;
    velocities from a zero-mean prior. The same cloud doubles as the birth
    pdf, so downstream importance ratios reduce to the likelihood.
    """
    batch = inp.batch
    h, r = batch.H, batch.R
    r_dag = pinv_psd(r) if batch.transformed else np.linalg.inv(r)
    info = symmetrize(h.T @ r_dag @ h)
    info_pinv = pinv_psd(info)
    pos_cov = cfg.birth_cov_inflation * info_pinv[:POS_DIM, :POS_DIM]
    try:
        c_pos = np.linalg.cholesky(symmetrize(pos_cov))
    except np.linalg.LinAlgError as exc:
        raise DegenerateBeliefError("birth position covariance not PD") from exc
    n_vel = min(2, state_dim - POS_DIM)
    clouds = []
    for z in batch.zs:
        x0 = info_pinv @ (h.T @ (r_dag @ z))
        particles = np.zeros((cfg.n_particles, state_dim))
        particles[:, :POS_DIM] = (x0[:POS_DIM]
                                  + rng.standard_normal((cfg.n_particles, POS_DIM))
                                  @ c_pos.T)
        if n_vel > 0:
            particles[:, POS_DIM:POS_DIM + n_vel] = (
                cfg.vel_prior_std * rng.standard_normal((cfg.n_particles, n_vel)))
        clouds.append(particles)
    return clouds


def measurement_evaluation(beliefs: Sequence[ParticleBelief],
                           inp: BpSensorInput, cfg: BpConfig,
                           birth_clouds: Sequence[np.ndarray]):
    """Factors beta (survived) and xi (newborn) for one sensor.

    Returns (messages, q_cache, birth_liks): q_cache[(tau, i)] holds the
    per-particle detection-weighted likelihood ratio for gated pairs,
    birth_liks[i] the per-particle likelihood of measurement i under its
    birth cloud.
    """
    batch = inp.batch
    n, m = len(beliefs), batch.n_meas
    if any(b.n_particles == 0 for b in beliefs):
        raise InputError("belief without particles")
    lik = _BatchLikelihood(batch)
    log_clutter_intensity = math.log(inp.clutter.rate) + inp.clutter.log_density
    gamma_gate = chi2.ppf(cfg.gate_prob, lik.dof)

    beta = np.zeros((n, m + 1))
    q_cache = {}
    for tau, b in enumerate(beliefs):
        pd_x = inp.detection_probs(b.particles[:, :POS_DIM])
        beta[tau, 0] = float(b.weights @ (1.0 - pd_x)) + (1.0 - b.r_prob)
        if m == 0:
            continue
        total = float(np.sum(b.weights))
        if total > 0:
            mu = (b.weights @ b.particles) / total
            centered = b.particles - mu
            cov = symmetrize((centered * b.weights[:, None]).T @ centered / total)
            d2 = lik.gate_quadforms(mu, cov)
            gated = np.nonzero(d2 <= gamma_gate)[0]
        else:
            gated = np.empty(0, dtype=int)
        for i in gated:
            q = pd_x * np.exp(lik.loglik(batch.zs[i], b.particles)
                              - log_clutter_intensity)
            q_cache[(tau, int(i))] = q
            beta[tau, int(i) + 1] = float(b.weights @ q)

    xi = np.ones((m, n + 1))
    birth_liks = []
    for i in range(m):
        ll = np.exp(lik.loglik(batch.zs[i], birth_clouds[i]))
        birth_liks.append(ll)
        ratio = cfg.birth_rate * float(np.mean(ll)) * math.exp(-log_clutter_intensity)
        xi[i, 0] = 1.0 + ratio
    return AssociationMessages(beta, xi), q_cache, birth_liks


def iterative_association(msgs: AssociationMessages, iterations: int):
    """Run the nu/phi recursions and form the products kappa and iota.

    The initial target->measurement message is the beta sum with the
    matching entry excluded (the p = 0 message of the recursion). The final
    phi is computed from the last nu so the iota product is well defined.
    """
    beta, xi = msgs.beta, msgs.xi
    n, m = beta.shape[0], beta.shape[1] - 1

    if n > 0 and m > 0:
        beta_sum = beta.sum(axis=1)
        phi_eq = beta[:, 1:].copy()
        phi_neq = beta_sum[:, None] - phi_eq
        mx = np.maximum(phi_eq, phi_neq)
        _check_messages(mx)
        phi_eq, phi_neq = phi_eq / mx, phi_neq / mx
        nu_eq = np.ones((m, n))
        nu_neq = np.ones((m, n))
        for _ in range(iterations):
            ratio_phi = (phi_eq / phi_neq).T          # (M, N)
            t_i = ratio_phi.sum(axis=1, keepdims=True)
            nu_neq = xi[:, :1] + t_i - ratio_phi
            nu_eq = np.ones_like(nu_neq)
            mx = np.maximum(nu_eq, nu_neq)
            _check_messages(mx)
            nu_eq, nu_neq = nu_eq / mx, nu_neq / mx

            ratio_nu = (nu_eq / nu_neq).T             # (N, M)
            weighted = beta[:, 1:] * ratio_nu
            s_tau = weighted.sum(axis=1, keepdims=True)
            phi_eq = beta[:, 1:].copy()
            phi_neq = beta[:, :1] + s_tau - weighted
            mx = np.maximum(phi_eq, phi_neq)
            _check_messages(mx)
            phi_eq, phi_neq = phi_eq / mx, phi_neq / mx
        msgs.nu_eq, msgs.nu_neq = nu_eq, nu_neq
        msgs.phi_eq, msgs.phi_neq = phi_eq, phi_neq

        # phi_eq is exactly zero for hard-gated pairs; log(0) = -inf gives
        # the intended zero product entry after exponentiation.
        with np.errstate(divide="ignore"):
            log_nu_eq = np.log(nu_eq)
            log_nu_neq = np.log(nu_neq)
            log_phi_eq = np.log(phi_eq)
            log_phi_neq = np.log(phi_neq)
        log_k0 = log_nu_neq.sum(axis=0)               # (N,)
        kappa = np.empty((n, m + 1))
        kappa[:, 0] = log_k0
        kappa[:, 1:] = (log_k0[:, None] - log_nu_neq.T + log_nu_eq.T)
        kappa = np.exp(kappa - kappa.max(axis=1, keepdims=True))

        log_i0 = log_phi_neq.sum(axis=0)              # (M,)
        iota = np.empty((m, n + 1))
        iota[:, 0] = log_i0
        iota[:, 1:] = (log_i0[:, None] - log_phi_neq.T + log_phi_eq.T)
        iota = np.exp(iota - iota.max(axis=1, keepdims=True))
    else:
        # No targets or no measurements: the products reduce to empty
        # products, kappa(0) = 1 and iota(b) = 1.
        kappa = np.zeros((n, m + 1))
        if n:
            kappa[:, 0] = 1.0
        iota = np.ones((m, n + 1))

    msgs.kappa, msgs.iota = kappa, iota
    return kappa, iota


def _check_messages(arr: np.ndarray):
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DegenerateBeliefError("association message vector degenerated")


def measurement_update(beliefs: Sequence[ParticleBelief],
                       msgs: AssociationMessages, q_cache: dict,
                       birth_liks: Sequence[np.ndarray],
                       inp: BpSensorInput, cfg: BpConfig):
    """Unnormalized posteriors for survived targets and newborns."""
    kappa, iota = msgs.kappa, msgs.iota
    batch = inp.batch
    log_clutter_intensity = math.log(inp.clutter.rate) + inp.clutter.log_density

    survived_posts = []
    for tau, b in enumerate(beliefs):
        pd_x = inp.detection_probs(b.particles[:, :POS_DIM])
        gamma = kappa[tau, 0] * (1.0 - pd_x)
        for i in range(batch.n_meas):
            q = q_cache.get((tau, i))
            if q is not None and kappa[tau, i + 1] > 0:
                gamma = gamma + kappa[tau, i + 1] * q
        survived_posts.append((gamma, kappa[tau, 0]))

    newborn_posts = []
    scale = cfg.birth_rate * math.exp(-log_clutter_intensity) / cfg.n_particles
    for i in range(batch.n_meas):
        w_unnorm = iota[i, 0] * scale * birth_liks[i]
        denom = float(np.sum(iota[i]))
        newborn_posts.append((w_unnorm, denom))
    return survived_posts, newborn_posts


def _systematic_resample(weights: np.ndarray, n: int, u: float) -> np.ndarray:
    positions = (u + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def _ess(weights: np.ndarray) -> float:
    total = float(np.sum(weights))
    if total <= 0:
        return 0.0
    wn = weights / total
    return 1.0 / float(np.sum(wn * wn))


def belief_calculation(beliefs: Sequence[ParticleBelief], survived_posts,
                       newborn_posts, birth_clouds, labels, cfg: BpConfig,
                       rng: np.random.Generator):
    """Normalize posteriors into updated beliefs; resample when ESS is low.

    One resampling uniform is drawn per belief regardless of whether the
    resample triggers, so paired runs consume identical random streams.
    Returns (updated survived beliefs, newborn beliefs).
    """
    updated = []
    for b, (gamma, gamma0) in zip(beliefs, survived_posts):
        unnorm1 = b.weights * gamma
        unnorm0 = (1.0 - b.r_prob) * gamma0
        c = float(np.sum(unnorm1)) + unnorm0
        if not (c > 0.0) or not math.isfinite(c):
            raise DegenerateBeliefError("belief normalization constant <= 0")
        weights = unnorm1 / c
        r = float(np.sum(weights))
        u = float(rng.random())
        particles = b.particles
        if r > 0 and _ess(weights) < cfg.resample_ess_frac * b.n_particles:
            idx = _systematic_resample(weights / r, b.n_particles, u)
            particles = particles[idx]
            weights = np.full(b.n_particles, r / b.n_particles)
        updated.append(ParticleBelief(particles, weights, min(r, 1.0),
                                      b.label, b.missed_scans))

    newborn = []
    for i, ((w_unnorm, denom), cloud, label) in enumerate(
            zip(newborn_posts, birth_clouds, labels)):
        c = float(np.sum(w_unnorm)) + denom
        if not (c > 0.0) or not math.isfinite(c):
            raise DegenerateBeliefError("newborn normalization constant <= 0")
        weights = w_unnorm / c
        r = float(np.sum(weights))
        u = float(rng.random())
        particles = cloud
        if r > 0 and _ess(weights) < cfg.resample_ess_frac * len(weights):
            idx = _systematic_resample(weights / r, len(weights), u)
            particles = cloud[idx]
            weights = np.full(len(weights), r / len(weights))
        newborn.append(ParticleBelief(particles, weights, min(r, 1.0), label))
    return updated, newborn


def declare_estimate_prune(beliefs: Sequence[ParticleBelief], cfg: BpConfig):
    """MMSE estimates of declared targets; prune dead or stale beliefs."""
    estimates = []
    surviving = []
    for b in beliefs:
        if b.r_prob > cfg.declare_threshold:
            estimates.append((b.label, b.mean()))
        if b.r_prob >= cfg.prune_threshold and b.missed_scans <= cfg.max_missed_scans:
            surviving.append(b)
    return estimates, surviving


def bp_pipeline_step(beliefs: list, inputs: Sequence[BpSensorInput],
                     motion: MotionModel, cfg: BpConfig,
                     rng_for: Callable[[str, int], np.random.Generator],
                     scan: int = 0, trace: Optional[list] = None):
    """One scan: predict once, then process every sensor in order.

    rng_for(purpose, sensor) must return an independent deterministic
    stream; paired raw/transformed runs that share the factory consume
    identical draws. Returns (beliefs, estimates).
    """
    beliefs = bp_predict(beliefs, motion, cfg.survival_prob, rng_for("predict", -1))
    scan_support = [False] * len(beliefs)

    for l, inp in enumerate(sorted(inputs, key=lambda s: s.batch.sensor_id)):
        clouds = propose_births(inp, cfg, motion.n, rng_for("birth", l))
        msgs, q_cache, birth_liks = measurement_evaluation(beliefs, inp, cfg, clouds)
        kappa, iota = iterative_association(msgs, cfg.iterations)
        survived_posts, newborn_posts = measurement_update(
            beliefs, msgs, q_cache, birth_liks, inp, cfg)
        labels = [(scan, inp.batch.sensor_id, i) for i in range(inp.batch.n_meas)]
        updated, newborn = belief_calculation(
            beliefs, survived_posts, newborn_posts, clouds, labels, cfg,
            rng_for("resample", l))
        for tau in range(len(updated)):
            if kappa.shape[1] > 1 and float(np.sum(kappa[tau, 1:])) >= 0.5 * kappa[tau, 0]:
                scan_support[tau] = True
        if trace is not None:
            trace.append({
                "sensor": inp.batch.sensor_id,
                "beta": msgs.beta.copy(),
                "xi": msgs.xi.copy(),
                "kappa": kappa.copy(),
                "iota": iota.copy(),
                "weights": [b.weights.copy() for b in updated + newborn],
                "r_prob": np.array([b.r_prob for b in updated + newborn]),
            })
        beliefs = updated + newborn
        scan_support.extend([True] * len(newborn))

    for b, supported in zip(beliefs, scan_support):
        b.missed_scans = 0 if supported else b.missed_scans + 1
    estimates, beliefs = declare_estimate_prune(beliefs, cfg)
    return beliefs, estimates
