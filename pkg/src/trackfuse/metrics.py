"""OSPA / OSPA(2) distances and communication-byte accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError

BYTES_PER_SCALAR = 8

RAW = "raw"
INFO_FILTER = "info_filter"
TYPE1 = "type1"
TYPE2 = "type2"


@dataclass
class OspaParams:
    c: float = 50.0
    p: float = 2.0
    w: int = 10

    def __post_init__(self):
        if self.c <= 0 or self.p < 1 or self.w < 1:
            raise InputError("need c > 0, p >= 1, w >= 1")


def _as_points(x) -> np.ndarray:
    arr = np.asarray(list(x), dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 1)
    return np.atleast_2d(arr)


def ospa(X, Y, params: OspaParams) -> float:
    """Optimal subpattern assignment distance between two point sets.

    Per-point distances are cut off at c, matched by a Hungarian
    assignment, and the cardinality difference is charged at c. The inputs
    are canonically ordered before matching so the result is exactly
    symmetric.
    """
    a, b = _as_points(X), _as_points(Y)
    if a.shape[0] == 0 and b.shape[0] == 0:
        return 0.0
    if a.shape[0] == 0 or b.shape[0] == 0:
        return float(params.c)
    if (a.shape[0], a.tobytes()) > (b.shape[0], b.tobytes()):
        a, b = b, a
    diff = a[:, None, :] - b[None, :, :]
    d = np.minimum(np.sqrt(np.sum(diff * diff, axis=2)), params.c)
    rows, cols = linear_sum_assignment(d ** params.p)
    cost = float(np.sum(d[rows, cols] ** params.p))
    n, m = a.shape[0], b.shape[0]
    return float(((cost + params.c ** params.p * (max(n, m) - min(n, m)))
                  / max(n, m)) ** (1.0 / params.p))


def _track_base_distance(tx: dict, ty: dict, scans, c: float) -> float:
    """Time-averaged per-scan distance between two labeled tracks.

    Scans where both tracks exist contribute min(d, c), scans where exactly
    one exists contribute c, scans where neither exists are skipped.
    """
    total = 0.0
    count = 0
    for s in scans:
        in_x, in_y = s in tx, s in ty
        if not in_x and not in_y:
            continue
        count += 1
        if in_x and in_y:
            total += min(float(np.linalg.norm(tx[s] - ty[s])), c)
        else:
            total += c
    return total / count if count else 0.0


def ospa2(tracks_x: dict, tracks_y: dict, scan: int, params: OspaParams) -> float:
    """OSPA over labeled trajectories on the window [scan - w + 1, scan].

    tracks_* map label -> {scan: position}. Tracks with no presence inside
    the window are ignored.
    """
    scans = range(scan - params.w + 1, scan + 1)
    xs = [t for t in tracks_x.values() if any(s in t for s in scans)]
    ys = [t for t in tracks_y.values() if any(s in t for s in scans)]
    if not xs and not ys:
        return 0.0
    if not xs or not ys:
        return float(params.c)
    if len(xs) > len(ys):
        xs, ys = ys, xs
    d = np.zeros((len(xs), len(ys)))
    for i, tx in enumerate(xs):
        for j, ty in enumerate(ys):
            d[i, j] = _track_base_distance(tx, ty, scans, params.c)
    rows, cols = linear_sum_assignment(d ** params.p)
    cost = float(np.sum(d[rows, cols] ** params.p))
    n, m = len(xs), len(ys)
    return float(((cost + params.c ** params.p * (m - n)) / m) ** (1.0 / params.p))


def payload_scalars(kind: str, m: int, n: int) -> int:
    """Scalars transmitted per track for one payload kind."""
    if kind == RAW:
        return m + m * n + m * (m + 1) // 2
    if kind == INFO_FILTER:
        return 2 * n + n * (n + 1)
    if kind == TYPE1:
        return m + m * n
    if kind == TYPE2:
        return m + m * (m + 1) // 2
    raise InputError(f"unknown payload kind: {kind!r}")


def comm_bytes(kind: str, m: int, n: int, n_max: int) -> int:
    """Per-scan byte requirement for n_max tracks at 8 bytes per scalar."""
    if m <= 0 or n <= 0 or n_max <= 0:
        raise InputError("m, n, N_max must be positive")
    return BYTES_PER_SCALAR * payload_scalars(kind, m, n) * n_max


@dataclass
class CommLedger:
    """Accumulated actual transmission bytes per scan and sensor."""

    records: list = field(default_factory=list)
    total_bytes: int = 0

    def record(self, scan: int, sensor: int, n_tracks_sent: int,
               kind: str, m: int, n: int):
        if n_tracks_sent < 0:
            raise InputError("track count must be nonnegative")
        bytes_sent = BYTES_PER_SCALAR * payload_scalars(kind, m, n) * n_tracks_sent
        self.records.append((scan, sensor, kind, n_tracks_sent, bytes_sent))
        self.total_bytes += bytes_sent

    def bytes_for_scan(self, scan: int) -> int:
        return sum(r[4] for r in self.records if r[0] == scan)

    def mean_bytes_per_scan(self, n_scans: int) -> float:
        if n_scans <= 0:
            raise InputError("n_scans must be positive")
        return self.total_bytes / n_scans
