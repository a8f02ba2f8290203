"""Scenario simulation, local GNN trackers, and the Monte Carlo harness.

All randomness flows through `rng_stream`, a counter-based stream keyed by
(seed, purpose, scan, sensor, ...). Raw and transformed fusion arms of a
comparison share every key, so they consume identical measurement
realizations and identical in-pipeline draws; only the payload encoding
differs.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import chi2

from . import bp as bp_mod
from . import mda as mda_mod
from .errors import ConfigError, InputError
from .linalg import symmetrize
from .metrics import CommLedger, OspaParams, ospa, ospa2
from .models import (
    GaussianEstimate,
    MeasurementBatch,
    MeasurementModel,
    MotionModel,
    innovation,
    predict,
    update_raw,
)
from .transform import (
    ClutterModel,
    clutter_density_transformed,
    make_type1,
    make_type2,
)

BIG = 1e12


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        return int(part) % (2 ** 32)
    raise InputError(f"rng key parts must be str or int, got {type(part)!r}")


def rng_stream(seed: int, *key) -> np.random.Generator:
    """Deterministic, platform-independent stream for a (seed, key) tuple."""
    entropy = [_key_part(seed)] + [_key_part(p) for p in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class FieldOfView:
    """Angular wedge with a range limit around a sensor position."""

    origin: np.ndarray
    boresight: float
    half_angle: float
    max_range: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        if self.max_range <= 0 or not (0 < self.half_angle <= math.pi):
            raise ConfigError("need max_range > 0 and 0 < half_angle <= pi")

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.origin
        rng = np.hypot(rel[:, 0], rel[:, 1])
        bearing = np.arctan2(rel[:, 1], rel[:, 0])
        dber = np.angle(np.exp(1j * (bearing - self.boresight)))
        return (rng <= self.max_range) & (np.abs(dber) <= self.half_angle)

    @property
    def area(self) -> float:
        return self.half_angle * self.max_range ** 2

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform points in the wedge (radius proportional to sqrt(u))."""
        bearings = self.boresight + rng.uniform(-self.half_angle,
                                                self.half_angle, count)
        radii = self.max_range * np.sqrt(rng.uniform(0.0, 1.0, count))
        return self.origin + np.column_stack([radii * np.cos(bearings),
                                              radii * np.sin(bearings)])


@dataclass
class SensorConfig:
    position: np.ndarray
    boresight: float
    fov_half_angle: float = math.pi / 4
    fov_range: float = 1200.0
    p_d: float = 0.9
    clutter_rate: float = 10.0

    def fov(self) -> FieldOfView:
        return FieldOfView(self.position, self.boresight,
                           self.fov_half_angle, self.fov_range)


@dataclass
class TargetConfig:
    birth: int
    death: int
    initial_state: np.ndarray

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=float).reshape(4)
        if not self.birth < self.death:
            raise ConfigError("target birth must precede death")


@dataclass
class ScenarioConfig:
    duration: int
    dt: float
    q: float
    sigma: float
    sensors: list
    targets: list
    theta_range: tuple = (-0.02, 0.02)
    vartheta_range: tuple = (0.0, 1.0)
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        for tgt in self.targets:
            if tgt.death > self.duration:
                raise ConfigError("target outlives the scenario duration")

    def with_overrides(self, p_d: Optional[float] = None,
                       clutter_rate: Optional[float] = None) -> "ScenarioConfig":
        sensors = []
        for s in self.sensors:
            sensors.append(dataclasses.replace(
                s,
                p_d=s.p_d if p_d is None else p_d,
                clutter_rate=s.clutter_rate if clutter_rate is None else clutter_rate))
        return dataclasses.replace(self, sensors=sensors)


def motion_model(cfg: ScenarioConfig) -> MotionModel:
    """Nearly-constant-velocity model for state [x1, x2, v1, v2]."""
    dt = cfg.dt
    f = np.kron(np.array([[1.0, dt], [0.0, 1.0]]), np.eye(2))
    gamma = np.kron(np.array([[dt * dt / 2.0], [dt]]), np.eye(2))
    q = gamma @ (cfg.q ** 2 * np.eye(2)) @ gamma.T
    return MotionModel(f, q)


def _aim_at(position, point) -> float:
    d = np.asarray(point, dtype=float) - np.asarray(position, dtype=float)
    return float(math.atan2(d[1], d[0]))


def scenario1() -> ScenarioConfig:
    """Two sensors, three crossing targets on a 1600 m x 1200 m region.

    Target starting states are fixed, documented defaults; override them
    through a scenario file if needed.
    """
    centroid = (0.0, -200.0)
    sensors = [
        SensorConfig(np.array([-600.0, -800.0]), _aim_at([-600.0, -800.0], centroid)),
        SensorConfig(np.array([600.0, -800.0]), _aim_at([600.0, -800.0], centroid)),
    ]
    targets = [
        TargetConfig(1, 100, [-400.0, -200.0, 8.0, 1.0]),
        TargetConfig(1, 100, [400.0, -150.0, -8.0, 1.5]),
        TargetConfig(10, 80, [0.0, 300.0, 1.0, -7.0]),
    ]
    return ScenarioConfig(duration=100, dt=1.0, q=0.1, sigma=5.0,
                          sensors=sensors, targets=targets, name="scenario1")


def scenario2(state_seed: int = 20230) -> ScenarioConfig:
    """Ten sensors on a 1000 m circle, ten targets with staggered lifetimes.

    Initial target states are drawn once from `state_seed`: positions
    uniform over the central 60% of the region, speeds uniform in
    [5, 12] m/s with a random heading.
    """
    sensors = []
    for k in range(10):
        ang = 2.0 * math.pi * k / 10.0
        pos = np.array([1000.0 * math.cos(ang), 1000.0 * math.sin(ang)])
        sensors.append(SensorConfig(pos, _aim_at(pos, (0.0, 0.0))))
    spans = [(1, 100)] * 3 + [(20, 60)] * 3 + [(40, 80)] * 4
    rng = rng_stream(state_seed, "scenario2-init")
    targets = []
    for birth, death in spans:
        pos = rng.uniform(-600.0, 600.0, 2)
        speed = rng.uniform(5.0, 12.0)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        targets.append(TargetConfig(birth, death, np.concatenate([pos, vel])))
    return ScenarioConfig(duration=100, dt=1.0, q=0.1, sigma=5.0,
                          sensors=sensors, targets=targets, name="scenario2")


def generate_truth(cfg: ScenarioConfig, seed: int):
    """Per-target trajectories {scan: state}; deterministic given the seed."""
    motion = motion_model(cfg)
    gamma = np.kron(np.array([[cfg.dt ** 2 / 2.0], [cfg.dt]]), np.eye(2))
    rng = rng_stream(seed, "truth")
    truth = []
    for tgt in cfg.targets:
        x = tgt.initial_state.copy()
        traj = {tgt.birth: x.copy()}
        for scan in range(tgt.birth + 1, tgt.death + 1):
            v = cfg.q * rng.standard_normal(2)
            x = motion.F @ x + gamma @ v
            traj[scan] = x.copy()
        truth.append(traj)
    return truth


@dataclass
class SensorScan:
    """Raw output of one sensor at one scan."""

    sensor_id: int
    zs: np.ndarray
    model: MeasurementModel
    E: np.ndarray
    fov_volume: float

    @property
    def n_meas(self) -> int:
        return self.zs.shape[0]


def generate_measurements(truth, cfg: ScenarioConfig, scan: int, seed: int):
    """One scan of detections plus clutter for every sensor.

    The time-varying H = [diag(1 + theta), 0] and R = diag(sigma^2 +
    vartheta) parameters are drawn per scan and sensor and are carried in
    the returned models (they are known to all trackers).
    """
    scans = []
    alive = [traj[scan] for traj in truth if scan in traj]
    for sensor_id, sc in enumerate(cfg.sensors):
        rng = rng_stream(seed, "meas", scan, sensor_id)
        theta = rng.uniform(cfg.theta_range[0], cfg.theta_range[1], 2)
        vartheta = rng.uniform(cfg.vartheta_range[0], cfg.vartheta_range[1], 2)
        e = np.diag(1.0 + theta)
        h = np.hstack([e, np.zeros((2, 2))])
        r = np.diag(cfg.sigma ** 2 + vartheta)
        model = MeasurementModel(h, r, sensor_id)
        fov = sc.fov()

        zs = []
        chol_r = np.linalg.cholesky(r)
        for x in alive:
            if not fov.contains(x[:2])[0]:
                continue
            if rng.random() <= sc.p_d:
                zs.append(h @ x + chol_r @ rng.standard_normal(2))
        n_clutter = rng.poisson(sc.clutter_rate)
        if n_clutter:
            clutter_pos = fov.sample(rng, n_clutter)
            zs.extend(list(clutter_pos @ e.T))
        zs = np.array(zs) if zs else np.zeros((0, 2))
        if len(zs):
            zs = zs[rng.permutation(len(zs))]
        volume = fov.area * float(np.linalg.det(e))
        scans.append(SensorScan(sensor_id, zs, model, e, volume))
    return scans


@dataclass
class LocalTrackerConfig:
    confirm_hits: int = 4
    delete_misses: int = 3
    gate_prob: float = 0.99
    capture_speed: float = 30.0


@dataclass
class _LocalTrack:
    est: GaussianEstimate
    hits: int = 1
    misses: int = 0
    confirmed: bool = False


class GnnTracker:
    """Single-sensor global-nearest-neighbor tracker.

    Gated 2-D assignment on negative log-likelihood costs, two-point
    differencing initiation, M-of-N style confirmation/deletion. Returns
    the measurement indices of confirmed tracks updated this scan (the
    payload the sensor transmits).
    """

    def __init__(self, motion: MotionModel, dt: float,
                 cfg: Optional[LocalTrackerConfig] = None):
        self.motion = motion
        self.dt = dt
        self.cfg = cfg or LocalTrackerConfig()
        self.tracks: list = []
        self.initiators: list = []  # (position, covariance)

    def step(self, scan_data: SensorScan):
        cfg = self.cfg
        zs, model = scan_data.zs, scan_data.model
        m = zs.shape[0]
        for t in self.tracks:
            t.est = predict(t.est, self.motion)

        gamma = chi2.ppf(cfg.gate_prob, model.m)
        assigned_meas = set()
        transmit = []
        if self.tracks:
            n_t = len(self.tracks)
            mat = np.full((n_t, m + n_t), BIG)
            for ti, t in enumerate(self.tracks):
                z_hat, s = innovation(t.est, model)
                c = np.linalg.cholesky(s)
                logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
                base = logdet + model.m * math.log(2.0 * math.pi)
                if m:
                    y = np.linalg.solve(c, (zs - z_hat).T)
                    d2 = np.sum(y * y, axis=0)
                    inside = d2 <= gamma
                    mat[ti, :m][inside] = 0.5 * (d2[inside] + base)
                mat[ti, m + ti] = 0.5 * (gamma + base)
            rows, cols = linear_sum_assignment(mat)
            for ti, col in zip(rows, cols):
                t = self.tracks[ti]
                if col < m and mat[ti, col] < BIG:
                    t.est = update_raw(t.est, zs[col], model)
                    t.hits += 1
                    t.misses = 0
                    assigned_meas.add(int(col))
                    if t.hits >= cfg.confirm_hits:
                        t.confirmed = True
                    if t.confirmed:
                        transmit.append(int(col))
                else:
                    t.misses += 1
        self.tracks = [t for t in self.tracks if t.misses < cfg.delete_misses]

        leftovers = [i for i in range(m) if i not in assigned_meas]
        e_inv = np.linalg.inv(scan_data.E)
        pos_cov = symmetrize(e_inv @ model.R @ e_inv.T)
        positions = zs[leftovers] @ e_inv.T if leftovers else np.zeros((0, 2))

        paired = set()
        if self.initiators and leftovers:
            capture = cfg.capture_speed * self.dt + 4.0 * math.sqrt(
                float(np.max(np.linalg.eigvalsh(2.0 * pos_cov))))
            n_i = len(self.initiators)
            mat = np.full((n_i, len(leftovers) + n_i), capture ** 2)
            for ii, (p0, c0) in enumerate(self.initiators):
                d = np.linalg.norm(positions - p0, axis=1)
                ok = d <= capture
                mat[ii, :len(leftovers)][ok] = d[ok] ** 2
            rows, cols = linear_sum_assignment(mat)
            for ii, col in zip(rows, cols):
                if col >= len(leftovers) or mat[ii, col] >= capture ** 2:
                    continue
                p0, c0 = self.initiators[ii]
                p1 = positions[col]
                vel = (p1 - p0) / self.dt
                mean = np.concatenate([p1, vel])
                cov = np.zeros((4, 4))
                cov[:2, :2] = pos_cov
                cov[:2, 2:] = pos_cov / self.dt
                cov[2:, :2] = pos_cov / self.dt
                cov[2:, 2:] = (c0 + pos_cov) / (self.dt ** 2)
                self.tracks.append(_LocalTrack(GaussianEstimate(mean, cov),
                                               hits=2))
                paired.add(int(col))

        self.initiators = [(positions[j], pos_cov)
                           for j in range(len(leftovers)) if j not in paired]
        return sorted(transmit)


def encode_batch(scan_data: SensorScan, sent: Sequence[int], payload: str,
                 clutter_rate: float):
    """Fusion-center view of one sensor's transmission for a payload arm.

    Returns (MeasurementBatch, ClutterModel) where both are expressed in
    the payload's measurement space.
    """
    model = scan_data.model
    zs = scan_data.zs[list(sent)] if len(sent) else np.zeros((0, model.m))
    clutter = ClutterModel(clutter_rate, scan_data.fov_volume)
    if payload == "raw":
        return MeasurementBatch(model.sensor_id, zs, model.H, model.R, "raw"), clutter
    if payload == "type1":
        tr = make_type1(model)
    elif payload == "type2":
        tr = make_type2(model)
    else:
        raise InputError(f"unknown payload kind: {payload!r}")
    batch = MeasurementBatch(model.sensor_id, tr.apply(zs), tr.Ht, tr.Rt, payload)
    return batch, clutter_density_transformed(clutter, tr)


@dataclass
class RunRecord:
    """Per-scan metric curves for one (run, payload, fusion) combination."""

    ospa: np.ndarray
    ospa2: np.ndarray
    card_est: np.ndarray
    card_true: np.ndarray
    comm_bytes: np.ndarray

    @property
    def mean_ospa(self) -> float:
        return float(np.mean(self.ospa))

    @property
    def mean_comm_bytes(self) -> float:
        return float(np.mean(self.comm_bytes))


def _truth_tracks(truth):
    return {i: {s: x[:2] for s, x in traj.items()} for i, traj in enumerate(truth)}


def _record_metrics(scan, estimates, truth, est_history, truth_tracks,
                    params: OspaParams):
    truth_pos = [traj[scan][:2] for traj in truth if scan in traj]
    est_pos = [pos for _, pos in estimates]
    for label, pos in estimates:
        est_history.setdefault(label, {})[scan] = np.asarray(pos, dtype=float)
    d1 = ospa(est_pos, truth_pos, params)
    d2 = ospa2(est_history, truth_tracks, scan, params)
    return d1, d2, len(est_pos), len(truth_pos)


def run_mda_fusion(cfg: ScenarioConfig, tapes, sends, payload: str,
                   mda_cfg: Optional[mda_mod.MdaConfig] = None,
                   ospa_params: Optional[OspaParams] = None) -> RunRecord:
    """Fuse a prepared measurement tape with the MDA pipeline."""
    mda_cfg = mda_cfg or mda_mod.MdaConfig()
    params = ospa_params or OspaParams()
    motion = motion_model(cfg)
    truth = tapes["truth"]
    truth_tracks = _truth_tracks(truth)
    ledger = CommLedger()
    tracks: list = []
    next_label = 0
    est_history: dict = {}
    curves = {k: [] for k in ("ospa", "ospa2", "card_est", "card_true", "comm")}

    for scan in range(1, cfg.duration + 1):
        batches = []
        views = []
        for scan_data, sent in zip(tapes["scans"][scan - 1], sends[scan - 1]):
            sensor = cfg.sensors[scan_data.sensor_id]
            batch, clutter = encode_batch(scan_data, sent, payload,
                                          sensor.clutter_rate)
            batches.append(batch)
            views.append(mda_mod.SensorView.from_batch(batch, sensor.p_d, clutter))
            ledger.record(scan, scan_data.sensor_id, len(sent), payload,
                          scan_data.model.m, scan_data.model.n)
        tracks, next_label, _ = mda_mod.mda_pipeline_step(
            tracks, batches, views, motion, mda_cfg, next_label, scan)
        estimates = [(t.label, t.est.mean[:2]) for t in tracks if t.confirmed]
        d1, d2, n_est, n_true = _record_metrics(
            scan, estimates, truth, est_history, truth_tracks, params)
        curves["ospa"].append(d1)
        curves["ospa2"].append(d2)
        curves["card_est"].append(n_est)
        curves["card_true"].append(n_true)
        curves["comm"].append(ledger.bytes_for_scan(scan))
    return RunRecord(np.array(curves["ospa"]), np.array(curves["ospa2"]),
                     np.array(curves["card_est"]), np.array(curves["card_true"]),
                     np.array(curves["comm"], dtype=float))


def bp_scan_inputs(cfg: ScenarioConfig, scan_list, sends_scan, payload: str):
    """Per-sensor BP inputs for one scan of a prepared tape."""
    inputs = []
    for scan_data, sent in zip(scan_list, sends_scan):
        sensor = cfg.sensors[scan_data.sensor_id]
        batch, clutter = encode_batch(scan_data, sent, payload,
                                      sensor.clutter_rate)
        inputs.append(bp_mod.BpSensorInput(
            batch, sensor.p_d, clutter,
            detect_fn=_fov_detect_fn(sensor.fov(), sensor.p_d)))
    return inputs


def bp_rng_factory(seed: int, scan: int):
    """Stream factory shared by paired payload arms of one scan."""
    def rng_for(purpose, sensor):
        return rng_stream(seed, "bp", scan, sensor, purpose)
    return rng_for


def run_bp_fusion(cfg: ScenarioConfig, tapes, sends, payload: str, seed: int,
                  bp_cfg: Optional[bp_mod.BpConfig] = None,
                  ospa_params: Optional[OspaParams] = None,
                  trace_scans: Optional[dict] = None) -> RunRecord:
    """Fuse a prepared measurement tape with the BP pipeline.

    `seed` keys the in-pipeline streams; paired payload arms must pass the
    same value. When `trace_scans` is given, message traces are stored into
    it per scan index.
    """
    bp_cfg = bp_cfg or bp_mod.BpConfig()
    params = ospa_params or OspaParams()
    motion = motion_model(cfg)
    truth = tapes["truth"]
    truth_tracks = _truth_tracks(truth)
    ledger = CommLedger()
    beliefs: list = []
    est_history: dict = {}
    curves = {k: [] for k in ("ospa", "ospa2", "card_est", "card_true", "comm")}

    for scan in range(1, cfg.duration + 1):
        inputs = bp_scan_inputs(cfg, tapes["scans"][scan - 1],
                                sends[scan - 1], payload)
        for scan_data, sent in zip(tapes["scans"][scan - 1], sends[scan - 1]):
            ledger.record(scan, scan_data.sensor_id, len(sent), payload,
                          scan_data.model.m, scan_data.model.n)

        trace = [] if trace_scans is not None else None
        beliefs, estimates = bp_mod.bp_pipeline_step(
            beliefs, inputs, motion, bp_cfg, bp_rng_factory(seed, scan),
            scan, trace)
        if trace_scans is not None:
            trace_scans[scan] = trace
        est_pairs = [(label, mean[:2]) for label, mean in estimates]
        d1, d2, n_est, n_true = _record_metrics(
            scan, est_pairs, truth, est_history, truth_tracks, params)
        curves["ospa"].append(d1)
        curves["ospa2"].append(d2)
        curves["card_est"].append(n_est)
        curves["card_true"].append(n_true)
        curves["comm"].append(ledger.bytes_for_scan(scan))
    return RunRecord(np.array(curves["ospa"]), np.array(curves["ospa2"]),
                     np.array(curves["card_est"]), np.array(curves["card_true"]),
                     np.array(curves["comm"], dtype=float))


def _fov_detect_fn(fov: FieldOfView, p_d: float):
    def detect(positions: np.ndarray) -> np.ndarray:
        return p_d * fov.contains(positions).astype(float)
    return detect


def prepare_run(cfg: ScenarioConfig, seed: int,
                local_cfg: Optional[LocalTrackerConfig] = None):
    """Generate truth, measurements and the local trackers' transmissions.

    The returned (tapes, sends) pair is shared verbatim by every payload
    arm of a comparison.
    """
    truth = generate_truth(cfg, seed)
    motion = motion_model(cfg)
    trackers = [GnnTracker(motion, cfg.dt, local_cfg) for _ in cfg.sensors]
    scans = []
    sends = []
    for scan in range(1, cfg.duration + 1):
        scan_list = generate_measurements(truth, cfg, scan, seed)
        scans.append(scan_list)
        sends.append([trackers[s.sensor_id].step(s) for s in scan_list])
    return {"truth": truth, "scans": scans}, sends


def run_single(cfg: ScenarioConfig, fusion: str, payloads: Sequence[str],
               run_idx: int, base_seed: int,
               mda_cfg=None, bp_cfg=None, ospa_params=None,
               local_cfg=None):
    """One Monte Carlo run across payload arms sharing one realization."""
    seed = base_seed + run_idx
    tapes, sends = prepare_run(cfg, seed, local_cfg)
    out = {}
    for payload in payloads:
        if fusion == "mda":
            out[payload] = run_mda_fusion(cfg, tapes, sends, payload,
                                          mda_cfg, ospa_params)
        elif fusion == "bp":
            out[payload] = run_bp_fusion(cfg, tapes, sends, payload, seed,
                                         bp_cfg, ospa_params)
        else:
            raise InputError(f"unknown fusion kind: {fusion!r}")
    return out


def monte_carlo(cfg: ScenarioConfig, fusion: str, payloads: Sequence[str],
                runs: int, base_seed: int = 0, mda_cfg=None, bp_cfg=None,
                ospa_params=None, local_cfg=None):
    """Monte Carlo harness: results[payload] is a list of RunRecords."""
    if runs < 1:
        raise InputError("need at least one run")
    results = {p: [] for p in payloads}
    for run_idx in range(runs):
        single = run_single(cfg, fusion, payloads, run_idx, base_seed,
                            mda_cfg, bp_cfg, ospa_params, local_cfg)
        for payload in payloads:
            results[payload].append(single[payload])
    return results
