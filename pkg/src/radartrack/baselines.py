"""Reference trackers for comparison: Doppler-propagated center tracking and
an IoU-cost constant-velocity Kalman tracker."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .association import hungarian
from .core import SegmentedScan, TrackerConfig, extract_moving_instances


def _per_point_ids(scan, detections, det_ids):
    ids = np.zeros(len(scan), dtype=np.int64)
    for det, tid in zip(detections, det_ids):
        ids[det.point_indices] = tid
    return ids


@dataclass
class _CenterTrack:
    track_id: int
    center: np.ndarray
    radial_speed: float
    misses: int = 0

    def advance(self, dt: float) -> None:
        r = np.hypot(*self.center)
        if r > 0:
            self.center = self.center + self.center / r * self.radial_speed * dt


def center_doppler_tracker(sequence: Sequence[SegmentedScan], config: TrackerConfig = TrackerConfig(),
                           dt: float = 0.5) -> List[np.ndarray]:
    """Instance centers pushed along the line of sight by the mean member Doppler,
    matched globally by distance with gate ``t_d2``."""
    tracks: List[_CenterTrack] = []
    next_id = 1
    out = []
    for scan in sequence:
        dets = extract_moving_instances(scan, 0)
        centers = np.array([d.center for d in dets]).reshape(-1, 2)
        speeds = [float(scan.scan.v[d.point_indices].mean()) for d in dets]
        if tracks and dets:
            pred = np.array([t.center for t in tracks])
            dist = np.linalg.norm(pred[:, None, :] - centers[None, :, :], axis=-1)
            matches = hungarian(dist, dist > config.t_d2)
        else:
            matches = []
        det_ids = [0] * len(dets)
        matched = dict(matches)
        survivors = []
        for ti, track in enumerate(tracks):
            if ti in matched:
                j = matched[ti]
                track.center, track.radial_speed, track.misses = centers[j], speeds[j], 0
                det_ids[j] = track.track_id
            else:
                track.misses += 1
                if track.misses > config.retention:
                    continue
            survivors.append(track)
        for j in range(len(dets)):
            if det_ids[j] == 0:
                survivors.append(_CenterTrack(next_id, centers[j], speeds[j]))
                det_ids[j] = next_id
                next_id += 1
        for track in survivors:
            track.advance(dt)
        tracks = survivors
        out.append(_per_point_ids(scan, dets, det_ids))
    return out


def box_iou(a, b) -> float:
    """IoU of axis-aligned boxes (xmin, ymin, xmax, ymax); zero-area unions give 0."""
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def hull_box(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, float).reshape(-1, 2)
    return np.concatenate([pts.min(axis=0), pts.max(axis=0)])


@dataclass
class KalmanTrack:
    """Constant-velocity filter on the box center; state (x, y, vx, vy)."""

    track_id: int
    state: np.ndarray
    covariance: np.ndarray
    box_size: np.ndarray  # (lower-left, upper-right) corners relative to the center
    misses: int = 0

    @classmethod
    def start(cls, track_id: int, box: np.ndarray, measurement_std: float, velocity_std: float = 10.0):
        center = (box[:2] + box[2:]) / 2
        cov = np.diag([measurement_std ** 2] * 2 + [velocity_std ** 2] * 2)
        rel = np.concatenate([box[:2] - center, box[2:] - center])
        return cls(track_id, np.array([*center, 0.0, 0.0]), cov, rel)

    @property
    def box(self) -> np.ndarray:
        return np.concatenate([self.state[:2] + self.box_size[:2], self.state[:2] + self.box_size[2:]])

    def predict(self, dt: float, process_std: float) -> None:
        F = np.eye(4)
        F[0, 2] = F[1, 3] = dt
        g = np.array([dt * dt / 2, dt])
        q1 = process_std ** 2 * np.outer(g, g)
        Q = np.zeros((4, 4))
        Q[np.ix_([0, 2], [0, 2])] = q1
        Q[np.ix_([1, 3], [1, 3])] = q1
        self.state = F @ self.state
        self.covariance = F @ self.covariance @ F.T + Q
        self.covariance = (self.covariance + self.covariance.T) / 2

    def update(self, box: np.ndarray, measurement_std: float) -> None:
        H = np.zeros((2, 4))
        H[0, 0] = H[1, 1] = 1.0
        z = (box[:2] + box[2:]) / 2
        S = H @ self.covariance @ H.T + np.eye(2) * measurement_std ** 2
        K = np.linalg.solve(S, H @ self.covariance).T
        self.state = self.state + K @ (z - H @ self.state)
        # Joseph form keeps the covariance symmetric PSD
        I_KH = np.eye(4) - K @ H
        self.covariance = I_KH @ self.covariance @ I_KH.T + K @ K.T * measurement_std ** 2
        self.covariance = (self.covariance + self.covariance.T) / 2
        self.box_size = np.concatenate([box[:2] - z, box[2:] - z])


def kalman_iou_tracker(sequence: Sequence[SegmentedScan], config: TrackerConfig = TrackerConfig(),
                       dt: float = 0.5, process_std: float = 0.5, measurement_std: float = 0.1,
                       iou_threshold: float = 0.01) -> List[np.ndarray]:
    """Associate by ``1 - IoU`` of hull boxes; pairs with IoU below the threshold never match."""
    measurement_std = max(measurement_std, 1e-3)
    tracks: List[KalmanTrack] = []
    next_id = 1
    out = []
    for scan in sequence:
        dets = extract_moving_instances(scan, 0)
        boxes = [hull_box(scan.scan.xy[d.point_indices]) for d in dets]
        for track in tracks:
            track.predict(dt, process_std)
        matches = []
        if tracks and dets:
            iou = np.array([[box_iou(t.box, b) for b in boxes] for t in tracks])
            matches = hungarian(1.0 - iou, iou < iou_threshold)
        matched = dict(matches)
        det_ids = [0] * len(dets)
        survivors = []
        for ti, track in enumerate(tracks):
            if ti in matched:
                j = matched[ti]
                track.update(boxes[j], measurement_std)
                track.misses = 0
                det_ids[j] = track.track_id
            else:
                track.misses += 1
                if track.misses > config.retention:
                    continue
            survivors.append(track)
        for j in range(len(dets)):
            if det_ids[j] == 0:
                survivors.append(KalmanTrack.start(next_id, boxes[j], measurement_std))
                det_ids[j] = next_id
                next_id += 1
        tracks = survivors
        out.append(_per_point_ids(scan, dets, det_ids))
    return out
