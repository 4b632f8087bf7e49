"""Data association: local clustering, per-cluster Hungarian matching,
distance/similarity gating and the track lifecycle."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import InstanceDescriptor, SegmentedScan, Track, TrackerConfig, extract_moving_instances
from .nets import TrackerNetworks, instance_features, similarity_cost


def dbscan(points, eps: float, min_pts: int = 1) -> np.ndarray:
    """Density-based clustering with neighborhoods ``|p - q| <= eps``.

    Labels are 0, 1, ... in order of each cluster's first-seen core point;
    noise is -1 (impossible with ``min_pts=1``).
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    adjacency = d2 <= eps * eps
    core = adjacency.sum(axis=1) >= min_pts
    cluster = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            if not core[i]:
                continue
            for j in np.flatnonzero(adjacency[i]):
                if labels[j] == -1:
                    labels[j] = cluster
                    queue.append(j)
        cluster += 1
    return labels


def _solve_square(cost: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Hungarian method on a square matrix.

    Returns ``col_of_row``. Columns are scanned in index order, so ties go to
    the lower index.
    """
    n = len(cost)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 1-based rows, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col[1:] - 1] = np.arange(n)
    return col_of_row


def hungarian(cost, forbidden=None) -> List[Tuple[int, int]]:
    """Minimum-cost one-to-one matching over the allowed entries.

    Among partial matchings of maximum cardinality the cheapest is returned,
    as (row, col) pairs sorted by row. Rectangular matrices are fine.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    a, b = cost.shape
    forbidden = np.zeros((a, b), bool) if forbidden is None else np.asarray(forbidden, bool)
    allowed = ~forbidden
    if a == 0 or b == 0 or not allowed.any():
        return []
    vals = cost[allowed]
    if not np.all(np.isfinite(vals)):
        raise ValueError("allowed costs must be finite")
    n = max(a, b)
    # Any matching using one more forbidden entry costs more than any
    # difference in allowed cost, so cardinality is maximized first.
    big = n * (np.abs(vals).max() * 2 + 1) + 1
    square = np.zeros((n, n))
    square[:a, :b] = np.where(allowed, cost, big)
    col_of_row = _solve_square(square)
    return [(i, int(col_of_row[i])) for i in range(a) if col_of_row[i] < b and allowed[i, col_of_row[i]]]


@dataclass
class AssignmentProblem:
    cost: np.ndarray
    forbidden: np.ndarray
    gated: np.ndarray
    row_ids: List[int]
    col_ids: List[int]


def detection_center(det: InstanceDescriptor, config: TrackerConfig) -> np.ndarray:
    return det.corrected_center if config.use_offset else det.center


def next_center(det: InstanceDescriptor, config: TrackerConfig) -> np.ndarray:
    """Where a track whose last detection is ``det`` is expected in the next scan."""
    if config.use_temporal_offset:
        return det.predicted_next_center
    return detection_center(det, config)


def build_cost(tracks: Sequence[Track], detections: Sequence[InstanceDescriptor], config: TrackerConfig,
               sim_cost: Optional[np.ndarray] = None) -> AssignmentProblem:
    """Distance cost between track predictions and detection centers.

    Pairs beyond ``t_d2`` are forbidden; pairs in ``(t_d1, t_d2]`` are gated
    on the similarity cost when ``config.use_similarity`` is set.
    """
    a, b = len(tracks), len(detections)
    if a and b:
        tc = np.array([t.predicted_center for t in tracks])
        dc = np.array([detection_center(d, config) for d in detections])
        diff = tc[:, None, :] - dc[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
    else:
        dist = np.zeros((a, b))
    forbidden = dist > config.t_d2
    gated = (~forbidden) & (dist > config.t_d1) if config.use_similarity else np.zeros((a, b), bool)
    return AssignmentProblem(dist, forbidden, gated, [t.track_id for t in tracks], [d.instance_id for d in detections])


@dataclass
class AssociationResult:
    matches: List[Tuple[int, int]]
    unmatched_tracks: List[int]
    unmatched_detections: List[int]
    rejected: List[Tuple[int, int]] = field(default_factory=list)
    clusters: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass
class TrackerState:
    config: TrackerConfig
    tracks: List[Track] = field(default_factory=list)
    next_id: int = 1
    last_t: Optional[int] = None


def associate_scan(state: TrackerState, detections: Sequence[InstanceDescriptor],
                   sim_cost: Optional[np.ndarray] = None) -> AssociationResult:
    """Match active tracks to this scan's detections.

    Track predictions and detection centers are pooled and clustered with
    DBSCAN (radius ``b``); each cluster is solved independently and gated
    matches whose similarity cost exceeds ``t_c`` are dropped.
    ``sim_cost`` is (tracks x detections) and required when gating is active.
    """
    cfg = state.config
    tracks = state.tracks
    a, b = len(tracks), len(detections)
    problem = build_cost(tracks, detections, cfg)
    if a == 0 or b == 0:
        return AssociationResult([], list(range(a)), list(range(b)))
    if problem.gated.any() and sim_cost is None:
        raise ValueError("similarity costs are needed for gated pairs")
    pooled = np.concatenate([np.array([t.predicted_center for t in tracks]),
                             np.array([detection_center(d, cfg) for d in detections])])
    labels = dbscan(pooled, cfg.b, cfg.min_pts)
    track_labels, det_labels = labels[:a], labels[a:]
    matches, rejected = [], []
    for c in np.unique(labels):
        if c < 0:
            continue
        rows = np.flatnonzero(track_labels == c)
        cols = np.flatnonzero(det_labels == c)
        if len(rows) == 0 or len(cols) == 0:
            continue
        sub = np.ix_(rows, cols)
        for i, j in hungarian(problem.cost[sub], problem.forbidden[sub]):
            ti, dj = int(rows[i]), int(cols[j])
            if problem.gated[ti, dj] and sim_cost[ti, dj] > cfg.t_c:
                rejected.append((ti, dj))
            else:
                matches.append((ti, dj))
    matches.sort()
    matched_t = {i for i, _ in matches}
    matched_d = {j for _, j in matches}
    return AssociationResult(
        matches=matches,
        unmatched_tracks=[i for i in range(a) if i not in matched_t],
        unmatched_detections=[j for j in range(b) if j not in matched_d],
        rejected=sorted(rejected),
        clusters=labels,
    )


def lifecycle_step(state: TrackerState, detections: Sequence[InstanceDescriptor],
                   result: AssociationResult, t: int) -> List[int]:
    """Update, propagate, retire and spawn tracks; returns the track id of each detection."""
    cfg = state.config
    det_track = [0] * len(detections)
    survivors = []
    matched = dict(result.matches)
    for ti, track in enumerate(state.tracks):
        if ti in matched:
            det = detections[matched[ti]]
            track.descriptor = det
            track.predicted_center = next_center(det, cfg)
            track.misses = 0
            track.age += 1
            track.history.append((t, det.instance_id))
            det_track[matched[ti]] = track.track_id
            survivors.append(track)
            continue
        track.misses += 1
        if track.misses > cfg.retention:
            continue
        if cfg.use_temporal_offset:
            track.predicted_center = track.predicted_center + track.descriptor.displacement
        track.age += 1
        survivors.append(track)
    for dj in result.unmatched_detections:
        det = detections[dj]
        track = Track(state.next_id, det, next_center(det, cfg), history=[(t, det.instance_id)])
        state.next_id += 1
        det_track[dj] = track.track_id
        survivors.append(track)
    state.tracks = survivors
    return det_track


class RadarTracker:
    """Stateful tracker for one sequence."""

    def __init__(self, config: TrackerConfig = TrackerConfig(), networks: Optional[TrackerNetworks] = None,
                 use_offset_head: bool = False):
        if config.use_similarity and networks is None:
            raise ValueError("similarity gating needs networks; set use_similarity=False for geometric tracking")
        if use_offset_head and (networks is None or networks.offsets is None):
            raise ValueError("use_offset_head needs networks with an offset head")
        self.config = config
        self.networks = networks.eval() if networks is not None else None
        self.use_offset_head = use_offset_head
        self.state = TrackerState(config)

    def predict_offsets(self, scan: SegmentedScan) -> SegmentedScan:
        moving = scan.semantics == 1
        off = np.zeros((len(scan), 2))
        toff = np.zeros((len(scan), 2))
        if moving.any():
            head = self.networks.offsets
            head.eval()
            o, ot = head(scan.scan.features[moving], scan.scan.xy[moving])
            off[moving], toff[moving] = o, ot
        return replace(scan, offsets=off, temporal_offsets=toff)

    def step(self, scan: SegmentedScan) -> np.ndarray:
        """Process one scan; returns per-point track ids (0 for static points)."""
        if self.state.last_t is not None and scan.t <= self.state.last_t:
            raise ValueError(f"scan index {scan.t} does not follow {self.state.last_t}")
        self.state.last_t = scan.t
        if self.use_offset_head:
            scan = self.predict_offsets(scan)
        cfg = self.config
        detections = extract_moving_instances(scan, cfg.dims[2])
        sim = None
        if cfg.use_similarity and detections:
            detections = instance_features(self.networks.instance_net, scan, detections)
            if self.state.tracks:
                tracks = self.state.tracks
                scores = self.networks.similarity_matrix(
                    np.array([t.descriptor.feature for t in tracks]),
                    np.array([t.predicted_center for t in tracks]),
                    np.array([d.feature for d in detections]),
                    np.array([detection_center(d, cfg) for d in detections]))
                sim = similarity_cost(scores, cfg.epsilon)
        result = associate_scan(self.state, detections, sim)
        det_track = lifecycle_step(self.state, detections, result, scan.t)
        ids = np.zeros(len(scan), dtype=np.int64)
        for det, tid in zip(detections, det_track):
            ids[det.point_indices] = tid
        return ids


def run_tracker(sequence: Sequence[SegmentedScan], config: TrackerConfig = TrackerConfig(),
                networks: Optional[TrackerNetworks] = None, use_offset_head: bool = False) -> List[np.ndarray]:
    tracker = RadarTracker(config, networks, use_offset_head)
    return [tracker.step(scan) for scan in sequence]
