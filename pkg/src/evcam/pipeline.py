"""Address-event detection, tracking and trigger rules.

Events are ``(n, 3)`` integer arrays of (row, col, sign) in stream order.
Positions are (row, col) pairs in pixel units.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .sensor import COLS, ROWS

log = logging.getLogger(__name__)


class NumericalDegeneracyWarning(RuntimeWarning):
    pass


@dataclass
class PipelineParams:
    cluster_radius: float = 6.0
    min_blob_pixels: int = 40
    merge_distance: float = 8.0
    min_blob_pixels_2: int = 40
    gate: float = 10.0
    size_limit: float = 20.0
    max_missed: int = 3
    min_track_age: int = 2
    process_noise: float = 1.0
    measurement_noise: float = 1.0
    initial_velocity_var: float = 25.0

    def __post_init__(self):
        for name in ("cluster_radius", "merge_distance", "gate", "size_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("min_blob_pixels", "min_blob_pixels_2", "max_missed", "min_track_age"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.process_noise < 0 or self.measurement_noise < 0:
            raise ValueError("noise scalars must be non-negative")


@dataclass
class Blob:
    row: float
    col: float
    rmin: int
    rmax: int
    cmin: int
    cmax: int
    pixel_count: int

    @property
    def height(self) -> int:
        return self.rmax - self.rmin + 1

    @property
    def width(self) -> int:
        return self.cmax - self.cmin + 1

    @property
    def area(self) -> int:
        return self.height * self.width

    @property
    def bbox(self):
        return self.rmin, self.rmax, self.cmin, self.cmax


class _Cluster:
    __slots__ = ("sr", "sc", "n", "row", "col", "rmin", "rmax", "cmin", "cmax")

    def __init__(self, row, col):
        self.sr = self.sc = 0.0
        self.n = 0
        self.row, self.col = float(row), float(col)
        self.rmin = self.cmin = 1 << 30
        self.rmax = self.cmax = -1

    def add(self, r, c):
        self.sr += r
        self.sc += c
        self.n += 1
        self.row, self.col = self.sr / self.n, self.sc / self.n
        self.rmin, self.rmax = min(self.rmin, r), max(self.rmax, r)
        self.cmin, self.cmax = min(self.cmin, c), max(self.cmax, c)

    def absorb(self, other):
        self.sr += other.sr
        self.sc += other.sc
        self.n += other.n
        self.row, self.col = self.sr / self.n, self.sc / self.n
        self.rmin, self.rmax = min(self.rmin, other.rmin), max(self.rmax, other.rmax)
        self.cmin, self.cmax = min(self.cmin, other.cmin), max(self.cmax, other.cmax)

    def blob(self):
        return Blob(self.row, self.col, self.rmin, self.rmax, self.cmin, self.cmax, self.n)


class OpCounter:
    """Counts elementary pipeline operations (distance evaluations, updates)."""

    def __init__(self):
        self.ops = 0


def detect_blobs(events, seeds=(), params: PipelineParams | None = None,
                 counter: OpCounter | None = None) -> list[Blob]:
    """Seeded single-pass clustering followed by filter, merge, filter.

    Each event joins the nearest cluster whose running centroid lies within
    ``cluster_radius`` (ties go to the older cluster), otherwise it opens a
    new cluster.  Seed clusters start at the given positions with no
    pixels.  Clusters whose centroids lie within ``merge_distance`` are
    merged, closest pair first, until no pair qualifies.
    """
    params = params or PipelineParams()
    counter = counter or OpCounter()
    clusters = [_Cluster(r, c) for r, c in seeds]
    counter.ops += len(clusters)
    radius2 = params.cluster_radius ** 2
    for r, c, _ in np.asarray(events).reshape(-1, 3).tolist():
        best, best_d = None, radius2
        for cl in clusters:
            d = (cl.row - r) ** 2 + (cl.col - c) ** 2
            if d <= best_d and (best is None or d < best_d):
                best, best_d = cl, d
        counter.ops += len(clusters) + 1
        if best is None:
            best = _Cluster(r, c)
            clusters.append(best)
        best.add(r, c)

    kept = [cl for cl in clusters if cl.n > 0 and cl.n >= params.min_blob_pixels]
    merge2 = params.merge_distance ** 2
    while len(kept) > 1:
        pair = None
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                d = (kept[i].row - kept[j].row) ** 2 + (kept[i].col - kept[j].col) ** 2
                if d <= merge2 and (pair is None or d < pair[0]):
                    pair = (d, i, j)
        counter.ops += len(kept) * (len(kept) - 1) // 2
        if pair is None:
            break
        _, i, j = pair
        kept[i].absorb(kept[j])
        del kept[j]
    return [cl.blob() for cl in kept if cl.n >= params.min_blob_pixels_2]


# -- Kalman filter -----------------------------------------------------------

_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def transition(dt: float) -> np.ndarray:
    return np.array([[1.0, 0.0, dt, 0.0], [0.0, 1.0, 0.0, dt], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])


def process_cov(dt: float, q: float) -> np.ndarray:
    """Piecewise white-acceleration noise for the constant-velocity model."""
    a, b, c = dt ** 4 / 4.0, dt ** 3 / 2.0, dt ** 2
    return q * np.array([[a, 0, b, 0], [0, a, 0, b], [b, 0, c, 0], [0, b, 0, c]], dtype=float)


@dataclass
class Track:
    id: int
    x: np.ndarray  # row, col, vrow, vcol
    P: np.ndarray
    bbox: tuple
    birth: tuple
    age: int = 1
    missed: int = 0
    displacement: float = 0.0
    updated: bool = True
    alive: bool = True
    prev_pos: tuple | None = None
    last_pos: tuple | None = None  # filtered position at the last update
    rule_state: dict = field(default_factory=dict)

    @property
    def pos(self) -> tuple:
        return float(self.x[0]), float(self.x[1])

    @property
    def height(self) -> int:
        return self.bbox[1] - self.bbox[0] + 1

    @property
    def width(self) -> int:
        return self.bbox[3] - self.bbox[2] + 1

    @property
    def area(self) -> int:
        return self.height * self.width


def new_track(track_id: int, blob: Blob, params: PipelineParams) -> Track:
    r = params.measurement_noise
    v = params.initial_velocity_var
    P = np.diag([max(r, 1e-6), max(r, 1e-6), v, v])
    x = np.array([blob.row, blob.col, 0.0, 0.0])
    return Track(track_id, x, P, blob.bbox, (blob.row, blob.col), last_pos=(blob.row, blob.col))


def kalman_predict(track: Track, dt: float, q: float) -> Track:
    if dt <= 0:
        raise ValueError("dt must be positive")
    F = transition(dt)
    track.x = F @ track.x
    track.P = F @ track.P @ F.T + process_cov(dt, q)
    track.P = 0.5 * (track.P + track.P.T)
    return track


def kalman_update(track: Track, z, r: float) -> Track:
    """Position-only update in Joseph form."""
    z = np.asarray(z, dtype=float)
    R = r * np.eye(2)
    P = track.P
    S = _H @ P @ _H.T + R
    try:
        K = np.linalg.solve(S, _H @ P).T  # S is symmetric
    except np.linalg.LinAlgError:
        # singular innovation covariance (zero noise and zero position variance)
        K = (np.linalg.pinv(S) @ _H @ P).T
    track.x = track.x + K @ (z - _H @ track.x)
    A = np.eye(4) - K @ _H
    P = A @ P @ A.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(P).min() < -1e-9:
        warnings.warn(f"track {track.id}: covariance lost positive semidefiniteness",
                      NumericalDegeneracyWarning, stacklevel=2)
        P = P + 1e-9 * np.eye(4)
    track.P = P
    return track


# -- association -------------------------------------------------------------

@dataclass
class Association:
    matches: list  # (track, blob index)
    births: list  # blob indices
    unmatched: list  # tracks


def associate(blobs, tracks, params: PipelineParams) -> Association:
    """Greedy nearest-centroid matching under distance and size gates.

    Candidate pairs are taken in order of (distance, track id, blob index),
    so equidistant blobs go to the earlier one in stream order.
    """
    pairs = []
    for t in tracks:
        tr, tc = t.pos
        for j, b in enumerate(blobs):
            d = math.hypot(b.row - tr, b.col - tc)
            if d > params.gate:
                continue
            if max(abs(b.height - t.height), abs(b.width - t.width)) > params.size_limit:
                continue
            pairs.append((d, t.id, j, t))
    pairs.sort(key=lambda p: p[:3])
    used_t, used_b = set(), set()
    matches = []
    for _, tid, j, t in pairs:
        if tid in used_t or j in used_b:
            continue
        used_t.add(tid)
        used_b.add(j)
        matches.append((t, j))
    births = [j for j in range(len(blobs)) if j not in used_b]
    unmatched = [t for t in tracks if t.id not in used_t]
    return Association(matches, births, unmatched)


# -- triggers ----------------------------------------------------------------

@dataclass(frozen=True)
class LoopEnter:
    rule_id: str
    region: tuple  # rmin, cmin, rmax, cmax (inclusive, real-valued)
    min_size: float = 0.0  # minimum bbox area in pixels

    def __post_init__(self):
        r0, c0, r1, c1 = self.region
        if not (0 <= r0 <= r1 <= ROWS - 1 and 0 <= c0 <= c1 <= COLS - 1):
            raise ValueError(f"loop {self.rule_id}: region {self.region} outside the image plane")

    def contains(self, pos) -> bool:
        r0, c0, r1, c1 = self.region
        return r0 <= pos[0] <= r1 and c0 <= pos[1] <= c1


@dataclass(frozen=True)
class LineCross:
    rule_id: str
    p1: tuple
    p2: tuple
    direction: int = 0  # +1: negative to positive side, -1: reverse, 0: either

    def __post_init__(self):
        for r, c in (self.p1, self.p2):
            if not (0 <= r <= ROWS - 1 and 0 <= c <= COLS - 1):
                raise ValueError(f"line {self.rule_id}: endpoint outside the image plane")
        if self.direction not in (-1, 0, 1):
            raise ValueError("direction must be -1, 0 or +1")

    def side(self, pos) -> int:
        (r1, c1), (r2, c2) = self.p1, self.p2
        cross = (r2 - r1) * (pos[1] - c1) - (c2 - c1) * (pos[0] - r1)
        return (cross > 0) - (cross < 0)

    def crosses(self, a, b) -> bool:
        """Whether the step a -> b passes through the segment."""
        sa, sb = self.side(a), self.side(b)
        if sa == 0 or sb == 0 or sa == sb:
            return False
        return _side(a, b, self.p1) * _side(a, b, self.p2) <= 0


def _side(a, b, p) -> int:
    cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    return (cross > 0) - (cross < 0)


@dataclass(frozen=True)
class Disappear:
    rule_id: str
    border_margin: float = 5.0
    min_displacement: float = 8.0

    def away_from_border(self, pos) -> bool:
        r, c = pos
        return min(r, ROWS - 1 - r, c, COLS - 1 - c) > self.border_margin


@dataclass(frozen=True)
class TriggerEvent:
    frame_index: int
    rule_id: str
    track_id: int
    row: float
    col: float


def evaluate_triggers(tracks, rules, frame_index: int, min_track_age: int = 1) -> list[TriggerEvent]:
    """Evaluate all rules on this frame's track states.

    ``tracks`` holds live tracks plus those that died this frame
    (``alive`` False).  Per-(track, rule) memory lives in
    ``track.rule_state``.
    """
    out = []
    for t in sorted(tracks, key=lambda t: t.id):
        for rule in rules:
            fired = False
            if isinstance(rule, Disappear):
                fired = (not t.alive and t.age >= min_track_age and rule.away_from_border(t.last_pos)
                         and t.displacement >= rule.min_displacement)
            elif not t.alive or not t.updated:
                continue
            elif isinstance(rule, LoopEnter):
                st = t.rule_state.setdefault(rule.rule_id, {"fired": False})
                if rule.contains(t.pos):
                    if not st["fired"] and t.age >= min_track_age and t.area >= rule.min_size:
                        st["fired"] = fired = True
                else:
                    st["fired"] = False
            elif isinstance(rule, LineCross):
                last = t.rule_state.get(rule.rule_id)
                if last is not None and t.age >= min_track_age and rule.crosses(last, t.pos):
                    sign = rule.side(t.pos)
                    fired = rule.direction == 0 or sign == rule.direction
                if rule.side(t.pos) != 0:
                    t.rule_state[rule.rule_id] = t.pos
            else:
                raise TypeError(f"unknown rule type {type(rule).__name__}")
            if fired:
                pos = t.pos if t.alive else t.last_pos
                out.append(TriggerEvent(frame_index, rule.rule_id, t.id, *pos))
    return out


# -- tracker -----------------------------------------------------------------

class Tracker:
    """Multi-object tracker shared by the event and frame-based detectors."""

    def __init__(self, params: PipelineParams | None = None, counter: OpCounter | None = None):
        self.params = params or PipelineParams()
        self.counter = counter or OpCounter()
        self.tracks: list[Track] = []
        self.next_id = 0
        self.last_frame: int | None = None

    def predict(self, frame_index: int) -> None:
        dt = 1.0 if self.last_frame is None else float(frame_index - self.last_frame)
        for t in self.tracks:
            kalman_predict(t, dt, self.params.process_noise)
            t.updated = False
        self.counter.ops += len(self.tracks)

    def seeds(self):
        return [t.pos for t in self.tracks]

    def update(self, blobs, frame_index: int) -> list[Track]:
        """Associate ``blobs`` (tracks must already be predicted).

        Returns live tracks plus the ones that died on this frame.
        """
        p = self.params
        assoc = associate(blobs, self.tracks, p)
        self.counter.ops += len(self.tracks) * max(len(blobs), 1)
        for t, j in assoc.matches:
            b = blobs[j]
            t.prev_pos = t.pos
            kalman_update(t, (b.row, b.col), p.measurement_noise)
            t.bbox = b.bbox
            t.age += 1
            t.missed = 0
            t.updated = True
            t.last_pos = t.pos
            t.displacement = max(t.displacement, math.hypot(t.x[0] - t.birth[0], t.x[1] - t.birth[1]))
        dead = []
        for t in assoc.unmatched:
            t.missed += 1
            t.age += 1
            if t.missed > p.max_missed:
                t.alive = False
                dead.append(t)
        self.tracks = [t for t in self.tracks if t.alive]
        for j in assoc.births:
            self.tracks.append(new_track(self.next_id, blobs[j], p))
            self.next_id += 1
        self.last_frame = frame_index
        return self.tracks + dead


class EventPipeline:
    """Per-frame detection, tracking and triggering on address events."""

    def __init__(self, params: PipelineParams | None = None, rules=()):
        self.params = params or PipelineParams()
        self.rules = list(rules)
        self.counter = OpCounter()
        self.tracker = Tracker(self.params, self.counter)
        self.triggers: list[TriggerEvent] = []

    def process(self, events, frame_index: int):
        self.tracker.predict(frame_index)
        blobs = detect_blobs(events, self.tracker.seeds(), self.params, self.counter)
        return blobs, self.step_blobs(blobs, frame_index, predicted=True)

    def step_blobs(self, blobs, frame_index: int, predicted: bool = False) -> list[TriggerEvent]:
        if not predicted:
            self.tracker.predict(frame_index)
        tracks = self.tracker.update(blobs, frame_index)
        fired = evaluate_triggers(tracks, self.rules, frame_index, self.params.min_track_age)
        self.triggers.extend(fired)
        return fired
