"""Domain value types and geometric primitives shared by the tracker.

Coordinates are 2D, in the ego-compensated frame, in meters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

MOVING = 1
STATIC = 0


class PreconditionError(ValueError):
    """Raised when an operation is called outside its domain."""


@dataclass(frozen=True)
class RadarPoint:
    x: float
    y: float
    v: float
    rcs: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.y, self.v, self.rcs])):
            raise PreconditionError("radar point fields must be finite")

    @property
    def features(self) -> np.ndarray:
        """The 4-dim network input (x, y, rcs, v)."""
        return np.array([self.x, self.y, self.rcs, self.v])


@dataclass(frozen=True, eq=False)
class RadarScan:
    """One ego-compensated scan.

    Points are stored column-wise; ``xy`` is (N, 2), ``v`` and ``rcs`` are (N,).
    """

    sequence_id: str
    t: int
    xy: np.ndarray
    v: np.ndarray
    rcs: np.ndarray

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        v = np.asarray(self.v, dtype=float).reshape(-1)
        rcs = np.asarray(self.rcs, dtype=float).reshape(-1)
        if not (len(xy) == len(v) == len(rcs)):
            raise PreconditionError("xy, v and rcs must have the same length")
        if self.t < 0:
            raise PreconditionError("scan index must be non-negative")
        if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(v)) and np.all(np.isfinite(rcs))):
            raise PreconditionError("scan contains non-finite values")
        for name, arr in (("xy", xy), ("v", v), ("rcs", rcs)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_points(cls, sequence_id: str, t: int, points: Sequence[RadarPoint]) -> "RadarScan":
        xy = np.array([[p.x, p.y] for p in points], dtype=float).reshape(-1, 2)
        return cls(sequence_id, t, xy, [p.v for p in points], [p.rcs for p in points])

    def __len__(self) -> int:
        return len(self.xy)

    def point(self, i: int) -> RadarPoint:
        return RadarPoint(float(self.xy[i, 0]), float(self.xy[i, 1]), float(self.v[i]), float(self.rcs[i]))

    @property
    def features(self) -> np.ndarray:
        """(N, 4) network input: x, y, rcs, v."""
        return np.column_stack([self.xy, self.rcs, self.v])


@dataclass(frozen=True, eq=False)
class SegmentedScan:
    """A scan plus the segmentation provider's per-point output."""

    scan: RadarScan
    semantics: np.ndarray
    instance_ids: np.ndarray
    offsets: np.ndarray
    temporal_offsets: np.ndarray

    def __post_init__(self):
        n = len(self.scan)
        sem = np.asarray(self.semantics, dtype=np.int64).reshape(-1)
        inst = np.asarray(self.instance_ids, dtype=np.int64).reshape(-1)
        off = np.asarray(self.offsets, dtype=float).reshape(-1, 2)
        toff = np.asarray(self.temporal_offsets, dtype=float).reshape(-1, 2)
        if not (len(sem) == len(inst) == len(off) == len(toff) == n):
            raise PreconditionError("per-point arrays must match the point count")
        if np.any((sem != MOVING) & (sem != STATIC)):
            raise PreconditionError("semantic labels must be 0 (static) or 1 (moving)")
        if np.any(inst[sem == MOVING] <= 0):
            raise PreconditionError("moving points need a positive instance id")
        if np.any(inst[sem == STATIC] != 0):
            raise PreconditionError("static points must carry instance id 0")
        if not (np.all(np.isfinite(off)) and np.all(np.isfinite(toff))):
            raise PreconditionError("offsets must be finite")
        for name, arr in (("semantics", sem), ("instance_ids", inst), ("offsets", off), ("temporal_offsets", toff)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def t(self) -> int:
        return self.scan.t

    def __len__(self) -> int:
        return len(self.scan)

    @classmethod
    def unlabeled(cls, scan: RadarScan) -> "SegmentedScan":
        n = len(scan)
        return cls(scan, np.zeros(n, int), np.zeros(n, int), np.zeros((n, 2)), np.zeros((n, 2)))


@dataclass(frozen=True, eq=False)
class InstanceDescriptor:
    instance_id: int
    point_indices: np.ndarray
    center: np.ndarray
    corrected_center: np.ndarray
    predicted_next_center: np.ndarray
    feature: np.ndarray

    @property
    def displacement(self) -> np.ndarray:
        """Mean temporal offset of the members, i.e. the expected center motion per scan."""
        return self.predicted_next_center - self.center


@dataclass
class Track:
    track_id: int
    descriptor: InstanceDescriptor
    predicted_center: np.ndarray
    misses: int = 0
    age: int = 1
    history: List[Tuple[int, int]] = field(default_factory=list)


@dataclass(frozen=True)
class TrackerConfig:
    t_d1: float = 5.0
    t_d2: float = 10.0
    t_c: float = 1.5
    b: float = 10.0
    min_pts: int = 1
    retention: int = 12
    n_local: int = 6
    dims: Tuple[int, int, int] = (4, 64, 256)
    epsilon: float = 1e-6
    seed: int = 0
    # ablation switches
    use_similarity: bool = True
    use_offset: bool = True
    use_temporal_offset: bool = True

    def __post_init__(self):
        if not (0 < self.t_d1 <= self.t_d2):
            raise PreconditionError("need 0 < t_d1 <= t_d2")
        if self.t_c <= 0 or self.b <= 0 or self.epsilon <= 0:
            raise PreconditionError("t_c, b and epsilon must be positive")
        if self.min_pts < 1 or self.retention < 0 or self.n_local < 1:
            raise PreconditionError("min_pts >= 1, retention >= 0, n_local >= 1 required")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise PreconditionError("dims must be three positive integers")


def instance_center(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise PreconditionError("instance_center needs at least one point")
    if not np.all(np.isfinite(pts)):
        raise PreconditionError("coordinates must be finite")
    return pts.mean(axis=0)


def euclidean_2d(a, b) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.hypot(d[0], d[1]))


def extract_moving_instances(scan: SegmentedScan, feature_dim: int = 256) -> List[InstanceDescriptor]:
    """Group moving points by instance id, ascending.

    ``corrected_center`` is the member mean of ``point + offset`` and
    ``predicted_next_center`` the member mean of ``point + temporal_offset``.
    """
    moving = np.flatnonzero(scan.semantics == MOVING)
    if len(moving) == 0:
        return []
    xy = scan.scan.xy
    out = []
    for inst_id in np.unique(scan.instance_ids[moving]):
        idx = moving[scan.instance_ids[moving] == inst_id]
        center = instance_center(xy[idx])
        out.append(InstanceDescriptor(
            instance_id=int(inst_id),
            point_indices=idx,
            center=center,
            corrected_center=center + scan.offsets[idx].mean(axis=0),
            predicted_next_center=center + scan.temporal_offsets[idx].mean(axis=0),
            feature=np.zeros(feature_dim),
        ))
    return out
