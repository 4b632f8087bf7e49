"""Point-wise segmentation and tracking scores: IoU of the moving class,
classification score, association score and LSTQ."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Union

import numpy as np

from .core import MOVING, STATIC


@dataclass
class SequenceLabels:
    """Per-scan semantic labels and track ids (0 = none) for one sequence."""

    semantics: List[np.ndarray]
    track_ids: List[np.ndarray]

    def __post_init__(self):
        if len(self.semantics) != len(self.track_ids):
            raise ValueError("semantics and track ids cover different scan counts")
        self.semantics = [np.asarray(s, dtype=np.int64).reshape(-1) for s in self.semantics]
        self.track_ids = [np.asarray(t, dtype=np.int64).reshape(-1) for t in self.track_ids]
        for s, t in zip(self.semantics, self.track_ids):
            if len(s) != len(t):
                raise ValueError("per-scan label arrays differ in length")

    @property
    def scans(self) -> int:
        return len(self.semantics)


def _aligned(pred, gt):
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} predicted vs {len(gt)} ground-truth labels")
    return pred, gt


def class_iou(pred, gt, cls: int) -> float:
    """IoU of one class; NaN when the class is absent from both."""
    pred, gt = _aligned(pred, gt)
    p, g = pred == cls, gt == cls
    union = np.count_nonzero(p | g)
    return np.count_nonzero(p & g) / union if union else float("nan")


def iou_mov(pred, gt) -> float:
    value = class_iou(pred, gt, MOVING)
    return 1.0 if np.isnan(value) else value


def s_cls(pred, gt) -> float:
    """Mean IoU over the classes {moving, static} present in either labeling."""
    ious = [class_iou(pred, gt, c) for c in (MOVING, STATIC)]
    ious = [v for v in ious if not np.isnan(v)]
    return float(np.mean(ious)) if ious else 1.0


def s_assoc(pred_ids, gt_ids) -> float:
    """Association score over points; ids > 0 are tracks, ids must be globally unique.

    For every ground-truth track t: (1/|t|) * sum over predicted tracks s
    overlapping t of |s & t| * IoU(s, t); averaged over ground-truth tracks.
    """
    pred, gt = _aligned(pred_ids, gt_ids)
    gt_tracks, gt_sizes = np.unique(gt[gt > 0], return_counts=True)
    if len(gt_tracks) == 0:
        return 1.0 if not np.any(pred > 0) else 0.0
    pred_tracks, pred_sizes = np.unique(pred[pred > 0], return_counts=True)
    if len(pred_tracks) == 0:
        return 0.0
    pred_size = dict(zip(pred_tracks.tolist(), pred_sizes.tolist()))
    gt_index = {t: i for i, t in enumerate(gt_tracks.tolist())}
    both = (pred > 0) & (gt > 0)
    pairs, inter = np.unique(np.stack([gt[both], pred[both]], axis=1), axis=0, return_counts=True)
    terms: List[List[float]] = [[] for _ in gt_tracks]
    for (t, s), n in zip(pairs.tolist(), inter.tolist()):
        i = gt_index[t]
        terms[i].append(n * n / (gt_sizes[i] + pred_size[s] - n))
    # exactly rounded sums keep the score independent of predicted-id order
    per_track = np.array([math.fsum(ts) for ts in terms])
    return float(np.mean(per_track / gt_sizes))


def lstq_from_scores(cls_score: float, assoc_score: float) -> float:
    return float(np.sqrt(cls_score * assoc_score))


def _flatten_sequences(labels: Union[SequenceLabels, Sequence[SequenceLabels]]):
    if isinstance(labels, SequenceLabels):
        labels = [labels]
    sem, ids = [], []
    for k, seq in enumerate(labels):
        for s, t in zip(seq.semantics, seq.track_ids):
            sem.append(s)
            # make ids unique across sequences
            ids.append(np.where(t > 0, t + (k << 32), 0))
    if not sem:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(sem), np.concatenate(ids)


def _check_shapes(pred, gt):
    pred = [pred] if isinstance(pred, SequenceLabels) else list(pred)
    gt = [gt] if isinstance(gt, SequenceLabels) else list(gt)
    if len(pred) != len(gt):
        raise ValueError("different numbers of sequences")
    for p, g in zip(pred, gt):
        if p.scans != g.scans:
            raise ValueError("sequence lengths differ")
        for a, b in zip(p.semantics, g.semantics):
            if len(a) != len(b):
                raise ValueError("scan point counts differ")
    return pred, gt


def lstq(pred, gt) -> float:
    pred, gt = _check_shapes(pred, gt)
    ps, pi = _flatten_sequences(pred)
    gs, gi = _flatten_sequences(gt)
    return lstq_from_scores(s_cls(ps, gs), s_assoc(pi, gi))


def id_switches(pred: SequenceLabels, gt: SequenceLabels) -> int:
    """Times a ground-truth track's majority predicted id changes between its scans."""
    current: Dict[int, int] = {}
    switches = 0
    for p, g in zip(pred.track_ids, gt.track_ids):
        for t in np.unique(g[g > 0]):
            ids = p[(g == t) & (p > 0)]
            if len(ids) == 0:
                continue
            values, counts = np.unique(ids, return_counts=True)
            major = int(values[np.argmax(counts)])
            if t in current and current[t] != major:
                switches += 1
            current[int(t)] = major
    return switches


def evaluate(pred, gt) -> Dict[str, float]:
    """Metric report as a flat dict."""
    pred, gt = _check_shapes(pred, gt)
    ps, pi = _flatten_sequences(pred)
    gs, gi = _flatten_sequences(gt)
    cls_score = s_cls(ps, gs)
    assoc = s_assoc(pi, gi)
    return {
        "lstq": lstq_from_scores(cls_score, assoc),
        "s_assoc": assoc,
        "s_cls": cls_score,
        "iou_mov": iou_mov(ps, gs),
        "num_switches": int(sum(id_switches(p, g) for p, g in zip(pred, gt))),
        "num_tracks_pred": int(len(np.unique(pi[pi > 0]))),
        "num_tracks_gt": int(len(np.unique(gi[gi > 0]))),
    }
