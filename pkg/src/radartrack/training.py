"""Training loops for the similarity network and the offset heads."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .association import dbscan
from .core import MOVING, STATIC, SegmentedScan, extract_moving_instances
from .nets import AttentiveInstanceNet, OffsetHead, SimilarityHead, TrackerNetworks
from .nn import AdamW, bce_with_logits, offset_l1_loss, recalibrate_batchnorm
from .simulator import SimulatedScan

logger = logging.getLogger(__name__)

STATIC_CLUSTER_RADIUS = 2.0
RECALIBRATION_BATCHES = 20


@dataclass
class _InstanceSet:
    points: np.ndarray      # stacked member coordinates
    features: np.ndarray    # stacked member features
    segments: np.ndarray    # local instance index per row
    query_centers: np.ndarray
    key_centers: np.ndarray
    track_ids: np.ndarray   # ground-truth track per instance, 0 for static clusters

    @property
    def size(self) -> int:
        return len(self.track_ids)


@dataclass
class ScanPair:
    """Consecutive scans with ground-truth track ids; only the first scan's rows enter the loss."""

    first: SegmentedScan
    second: SegmentedScan
    first_tracks: np.ndarray
    second_tracks: np.ndarray


def scan_pairs(sequences: Sequence[Sequence[SimulatedScan]], segmented=None) -> List[ScanPair]:
    """Pairs (t, t+1) from simulated sequences.

    ``segmented`` optionally replaces the ground-truth segmentation per
    sequence (e.g. a corrupted copy) while keeping the true track ids.
    """
    pairs = []
    for k, seq in enumerate(sequences):
        scans = [s.segmented for s in seq] if segmented is None else segmented[k]
        for i in range(len(seq) - 1):
            pairs.append(ScanPair(scans[i], scans[i + 1], seq[i].track_ids, seq[i + 1].track_ids))
    return pairs


def _instance_set(scan: SegmentedScan, tracks: np.ndarray, rng: np.random.Generator, static_instances: int) -> _InstanceSet:
    dets = extract_moving_instances(scan, 0)
    groups = [d.point_indices for d in dets]
    track_ids = []
    for d in dets:
        ids, counts = np.unique(tracks[d.point_indices], return_counts=True)
        track_ids.append(int(ids[np.argmax(counts)]))
    qc = [d.predicted_next_center for d in dets]
    kc = [d.corrected_center for d in dets]
    static = np.flatnonzero(scan.semantics == STATIC)
    if static_instances and len(static):
        labels = dbscan(scan.scan.xy[static], STATIC_CLUSTER_RADIUS, 1)
        chosen = rng.permutation(labels.max() + 1)[:static_instances]
        for c in chosen:
            idx = static[labels == c]
            groups.append(idx)
            track_ids.append(0)
            center = scan.scan.xy[idx].mean(axis=0)
            qc.append(center)
            kc.append(center)
    if not groups:
        return _InstanceSet(np.zeros((0, 2)), np.zeros((0, 4)), np.zeros(0, np.int64),
                            np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, np.int64))
    idx = np.concatenate(groups)
    seg = np.concatenate([np.full(len(g), i) for i, g in enumerate(groups)])
    return _InstanceSet(scan.scan.xy[idx], scan.scan.features[idx], seg,
                        np.array(qc), np.array(kc), np.array(track_ids, dtype=np.int64))


@dataclass
class PreparedPair:
    query: _InstanceSet
    key: _InstanceSet

    def targets(self) -> np.ndarray:
        q = self.query.track_ids[:, None]
        k = self.key.track_ids[None, :]
        return ((q == k) & (q > 0)).astype(float)


def prepare_pairs(pairs: Sequence[ScanPair], static_instances: int = 2, seed: int = 0) -> List[PreparedPair]:
    rng = np.random.default_rng(seed)
    out = []
    for p in pairs:
        q = _instance_set(p.first, p.first_tracks, rng, static_instances)
        k = _instance_set(p.second, p.second_tracks, rng, static_instances)
        if q.size and k.size:
            out.append(PreparedPair(q, k))
    return out


@dataclass
class _Batch:
    points: np.ndarray
    features: np.ndarray
    segments: np.ndarray
    n_instances: int
    query_rows: np.ndarray
    key_rows: np.ndarray
    query_centers: np.ndarray
    key_centers: np.ndarray
    targets: np.ndarray
    mask: np.ndarray


def _collate(pairs: Sequence[PreparedPair]) -> _Batch:
    pts, feats, segs, q_rows, k_rows, qc, kc = [], [], [], [], [], [], []
    q_owner, k_owner, q_tracks, k_tracks = [], [], [], []
    offset = 0
    for n, pair in enumerate(pairs):
        for part, rows, centers, owner, tracks, which in (
                (pair.query, q_rows, qc, q_owner, q_tracks, "q"),
                (pair.key, k_rows, kc, k_owner, k_tracks, "k")):
            pts.append(part.points)
            feats.append(part.features)
            segs.append(part.segments + offset)
            rows.append(offset + np.arange(part.size))
            centers.append(part.query_centers if which == "q" else part.key_centers)
            owner.append(np.full(part.size, n))
            tracks.append(part.track_ids)
            offset += part.size
    q_owner, k_owner = np.concatenate(q_owner), np.concatenate(k_owner)
    q_tracks, k_tracks = np.concatenate(q_tracks), np.concatenate(k_tracks)
    mask = (q_owner[:, None] == k_owner[None, :]).astype(float)
    targets = ((q_tracks[:, None] == k_tracks[None, :]) & (q_tracks[:, None] > 0)).astype(float) * mask
    return _Batch(np.concatenate(pts), np.concatenate(feats), np.concatenate(segs), offset,
                  np.concatenate(q_rows), np.concatenate(k_rows), np.concatenate(qc), np.concatenate(kc),
                  targets, mask)


def similarity_loss(net: AttentiveInstanceNet, head: SimilarityHead, batch: _Batch, backward: bool = True) -> float:
    """Masked BCE of the similarity matrix; accumulates gradients when ``backward``."""
    inst = net.forward(batch.points, batch.features, batch.segments, batch.n_instances)
    logits = head.logits(inst[batch.query_rows], batch.query_centers, inst[batch.key_rows], batch.key_centers)
    loss, d_logits = bce_with_logits(logits, batch.targets, batch.mask)
    if backward:
        d_query, d_key = head.backward(d_logits)
        d_inst = np.zeros_like(inst)
        d_inst[batch.query_rows] += d_query
        d_inst[batch.key_rows] += d_key
        net.backward(d_inst)
    return loss


@dataclass
class TrainingResult:
    losses: List[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)


def train_similarity(net: AttentiveInstanceNet, head: SimilarityHead, pairs: Sequence[PreparedPair],
                     steps: int = 500, batch_size: int = 64, lr: float = 1e-3, weight_decay: float = 1e-2,
                     seed: int = 0, log_every: int = 0) -> TrainingResult:
    """AdamW on the masked BCE between predicted similarities and true correspondences."""
    if not pairs or not any(p.targets().any() for p in pairs):
        raise ValueError("training set has no positive (same-track) pair")
    rng = np.random.default_rng(seed)
    params = net.parameters() + head.parameters()
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    net.train()
    head.train()
    result = TrainingResult()
    for step in range(steps):
        chosen = rng.choice(len(pairs), size=batch_size, replace=len(pairs) < batch_size)
        batch = _collate([pairs[i] for i in chosen])
        opt.zero_grad()
        result.losses.append(similarity_loss(net, head, batch))
        opt.step()
        if log_every and step % log_every == 0:
            logger.info("similarity step %d loss %.4f", step, result.losses[-1])
    if steps:
        batches = [_collate([pairs[i] for i in rng.choice(len(pairs), size=batch_size, replace=len(pairs) < batch_size)])
                   for _ in range(RECALIBRATION_BATCHES)]
        recalibrate_batchnorm(net, lambda b: similarity_loss(net, head, b, backward=False), batches)
    net.eval()
    head.eval()
    return result


def pair_scores(networks: TrackerNetworks, pair: PreparedPair) -> np.ndarray:
    """Similarity matrix (first-scan instances x second-scan instances) in inference mode."""
    networks.eval()
    batch = _collate([pair])
    inst = networks.instance_net.forward(batch.points, batch.features, batch.segments, batch.n_instances)
    return networks.similarity.forward(inst[batch.query_rows], batch.query_centers,
                                       inst[batch.key_rows], batch.key_centers)


def score_summary(networks: TrackerNetworks, pairs: Sequence[PreparedPair]):
    """Mean similarity of true pairs and of false pairs."""
    true, false = [], []
    for pair in pairs:
        scores = pair_scores(networks, pair)
        target = pair.targets().astype(bool)
        true.extend(scores[target].tolist())
        false.extend(scores[~target].tolist())
    return float(np.mean(true)) if true else float("nan"), float(np.mean(false)) if false else float("nan")


def _offset_batch(scans: Sequence[SimulatedScan]):
    feats, xy, off, toff, valid = [], [], [], [], []
    for s in scans:
        seg = s.segmented
        moving = seg.semantics == MOVING
        feats.append(seg.scan.features[moving])
        xy.append(seg.scan.xy[moving])
        off.append(seg.offsets[moving])
        toff.append(seg.temporal_offsets[moving])
        valid.append(s.temporal_valid[moving])
    return (np.concatenate(feats), np.concatenate(xy), np.concatenate(off),
            np.concatenate(toff), np.concatenate(valid))


def offset_losses(head: OffsetHead, scans: Sequence[SimulatedScan], backward: bool = False):
    """(standard, temporal) L1 losses over moving points; temporal targets masked where undefined."""
    feats, xy, off, toff, valid = _offset_batch(scans)
    o, ot = head(feats, xy)
    l_off, g_off = offset_l1_loss(o, xy + off, xy, return_grad=True)
    if valid.any():
        l_temp, g_temp = offset_l1_loss(ot, xy + toff, xy, mask=valid, return_grad=True)
    else:
        l_temp, g_temp = 0.0, np.zeros_like(ot)
    if backward:
        head.backward(g_off, g_temp)
    return l_off, l_temp


def train_offsets(head: OffsetHead, scans: Sequence[SimulatedScan], steps: int = 500, batch_size: int = 64,
                  lr: float = 1e-3, weight_decay: float = 1e-2, seed: int = 0) -> TrainingResult:
    """Fit both offset heads to simulator ground truth (sum of the two L1 losses)."""
    scans = [s for s in scans if np.any(s.segmented.semantics == MOVING)]
    if not scans:
        raise ValueError("no moving points to train on")
    rng = np.random.default_rng(seed)
    opt = AdamW(head.parameters(), lr=lr, weight_decay=weight_decay)
    head.train()
    result = TrainingResult()
    for _ in range(steps):
        if len(scans) <= batch_size:
            chosen = scans
        else:
            chosen = [scans[i] for i in rng.choice(len(scans), size=batch_size, replace=False)]
        opt.zero_grad()
        l_off, l_temp = offset_losses(head, chosen, backward=True)
        result.losses.append(l_off + l_temp)
        opt.step()
    if steps:
        chunks = [scans[i:i + batch_size] for i in range(0, len(scans), batch_size)]
        recalibrate_batchnorm(head, lambda b: head(*_offset_batch(b)[:2]), chunks)
    head.eval()
    return result


def offset_mae(head: OffsetHead, scans: Sequence[SimulatedScan]):
    """Mean absolute error per coordinate of both heads in inference mode."""
    head.eval()
    feats, xy, off, toff, valid = _offset_batch(scans)
    o, ot = head(feats, xy)
    return float(np.abs(o - off).mean()), float(np.abs(ot - toff)[valid].mean()) if valid.any() else 0.0
