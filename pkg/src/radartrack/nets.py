"""Offset heads, attentive instance network and similarity head."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import InstanceDescriptor, SegmentedScan, TrackerConfig
from .nn import BatchNorm1d, Dense, Module, ReLU, knn_indices, segment_softmax, segment_sum, sigmoid, softmax, softmax_backward

# Raw point features (x, y, rcs, v) are tens of meters / dBsm / m/s; the
# attention and dot-product paths expect order-one inputs.
INPUT_SCALE = 0.1


class MLPStack(Module):
    """dense -> batch norm -> ReLU -> dense."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.fc1 = Dense(in_dim, hidden, rng)
        self.bn = BatchNorm1d(hidden)
        self.act = ReLU()
        self.fc2 = Dense(hidden, out_dim, rng)

    def forward(self, x):
        return self.fc2(self.act(self.bn(self.fc1(x))))

    __call__ = forward

    def backward(self, dy):
        return self.fc1.backward(self.bn.backward(self.act.backward(self.fc2.backward(dy))))


class OffsetHead(Module):
    """Two independent stacks predicting the standard offset O and the temporal offset O^temp.

    Input per point: its 4 raw features concatenated with its 2 coordinates.
    """

    def __init__(self, feature_dim: int = 4, hidden: int = 64, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.offset = MLPStack(feature_dim + 2, hidden, 2, rng)
        self.temporal = MLPStack(feature_dim + 2, hidden, 2, rng)

    def forward(self, features: np.ndarray, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([np.asarray(features, float), np.asarray(coords, float)], axis=1)
        return self.offset(x), self.temporal(x)

    __call__ = forward

    def backward(self, d_offset: np.ndarray, d_temporal: np.ndarray) -> None:
        self.offset.backward(d_offset)
        self.temporal.backward(d_temporal)


def offset_forward(head: OffsetHead, features: np.ndarray, coords: np.ndarray):
    return head.forward(features, coords)


class TransformerBlock(Module):
    """Residual block: dimension-expanding linear layer, vector-attention layer, output linear layer.

    The expanded features serve as the skip connection.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.lin_in = Dense(in_dim, out_dim, rng)
        self.w_q = Dense(out_dim, out_dim, rng, bias=False)
        self.w_k = Dense(out_dim, out_dim, rng, bias=False)
        self.w_v = Dense(out_dim, out_dim, rng, bias=False)
        self.pos1 = Dense(2, 2, rng)
        self.pos_bn = BatchNorm1d(2)
        self.pos_act = ReLU()
        self.pos2 = Dense(2, out_dim, rng)
        self.lin_out = Dense(out_dim, out_dim, rng)
        self._cache = None

    def positional_encoding(self, rel: np.ndarray) -> np.ndarray:
        return self.pos2(self.pos_act(self.pos_bn(self.pos1(rel))))

    def attention(self, points: np.ndarray, x: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
        """Vector attention over the given neighbor sets; ``x`` are already-expanded features."""
        q = self.w_q(x)
        k = self.w_k(x)
        v = self.w_v(x)
        rel = points[:, None, :] - points[neighbors]
        r = self.positional_encoding(rel)
        weights = softmax(q[:, None, :] - k[neighbors] + r, axis=1)
        values = v[neighbors] + r
        self._cache = (neighbors, weights, values, len(x))
        return (weights * values).sum(axis=1)

    def attention_backward(self, dout: np.ndarray) -> np.ndarray:
        neighbors, weights, values, m = self._cache
        d_weights = dout[:, None, :] * values
        d_values = weights * dout[:, None, :]
        d_scores = softmax_backward(weights, d_weights, axis=1)
        channels = dout.shape[1]
        flat_nb = neighbors.reshape(-1)
        dk = np.zeros((m, channels))
        np.add.at(dk, flat_nb, -d_scores.reshape(-1, channels))
        dv = np.zeros((m, channels))
        np.add.at(dv, flat_nb, d_values.reshape(-1, channels))
        dr = d_scores + d_values
        self.pos1.backward(self.pos_bn.backward(self.pos_act.backward(self.pos2.backward(dr))))
        return self.w_q.backward(d_scores.sum(axis=1)) + self.w_k.backward(dk) + self.w_v.backward(dv)

    def forward(self, points: np.ndarray, x: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
        expanded = self.lin_in(x)
        return self.lin_out(self.attention(points, expanded, neighbors)) + expanded

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        d_expanded = dy + self.attention_backward(self.lin_out.backward(dy))
        return self.lin_in.backward(d_expanded)


def vector_attention(block: TransformerBlock, points: np.ndarray, x: np.ndarray, n_local: int = 6) -> np.ndarray:
    """Attention layer of ``block`` on one instance, neighbors from kNN with ``k = n_local``."""
    points = np.asarray(points, float).reshape(-1, 2)
    return block.attention(points, np.asarray(x, float), knn_indices(points, n_local))


def grouped_neighbors(points: np.ndarray, segments: np.ndarray, k: int) -> np.ndarray:
    """kNN restricted to rows sharing a segment id; returns global row indices."""
    out = np.empty((len(points), k), dtype=np.int64)
    order = np.argsort(segments, kind="stable")
    bounds = np.flatnonzero(np.diff(segments[order])) + 1
    for rows in np.split(order, bounds):
        if len(rows):
            out[rows] = rows[knn_indices(points[rows], k)]
    return out


class AttentiveInstanceNet(Module):
    """Two transformer blocks followed by attentive aggregation into one vector per instance."""

    def __init__(self, dims: Sequence[int] = (4, 64, 256), n_local: int = 6, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        d, d1, d2 = dims
        self.n_local = n_local
        self.feature_dim = d2
        self.block1 = TransformerBlock(d, d1, rng)
        self.block2 = TransformerBlock(d1, d2, rng)
        self.agg = Dense(d2, d2, rng)
        self._cache = None

    def aggregate(self, x_out: np.ndarray, segments: np.ndarray, n_instances: int) -> np.ndarray:
        weights = segment_softmax(self.agg(x_out), segments, n_instances)
        self._cache = (x_out, weights, segments, n_instances)
        return segment_sum(weights * x_out, segments, n_instances)

    def aggregate_backward(self, d_inst: np.ndarray) -> np.ndarray:
        x_out, weights, segments, n = self._cache
        d_rows = d_inst[segments]
        dx = weights * d_rows
        d_weights = x_out * d_rows
        d_logits = weights * (d_weights - segment_sum(weights * d_weights, segments, n)[segments])
        return dx + self.agg.backward(d_logits)

    def forward(self, points: np.ndarray, features: np.ndarray, segments: np.ndarray, n_instances: int) -> np.ndarray:
        """Per-point (points, 4-dim features, instance index) -> (n_instances, D2)."""
        points = np.asarray(points, float)
        segments = np.asarray(segments, dtype=np.int64)
        neighbors = grouped_neighbors(points, segments, self.n_local)
        h = self.block1(points, np.asarray(features, float) * INPUT_SCALE, neighbors)
        h = self.block2(points, h, neighbors)
        return self.aggregate(h, segments, n_instances)

    __call__ = forward

    def backward(self, d_inst: np.ndarray) -> np.ndarray:
        dh = self.block2.backward(self.aggregate_backward(d_inst))
        return self.block1.backward(dh) * INPUT_SCALE


def attentive_aggregate(net: AttentiveInstanceNet, x_out: np.ndarray) -> np.ndarray:
    """Aggregate the member features of a single instance into a (1, D2) vector."""
    x_out = np.asarray(x_out, float)
    if len(x_out) == 0:
        raise ValueError("cannot aggregate an empty instance")
    return net.aggregate(x_out, np.zeros(len(x_out), dtype=np.int64), 1)


def instance_batch(scan: SegmentedScan, instances: Sequence[InstanceDescriptor]):
    """Stack member points of ``instances`` into (points, features, segment index)."""
    if not instances:
        return np.zeros((0, 2)), np.zeros((0, 4)), np.zeros(0, dtype=np.int64)
    idx = np.concatenate([d.point_indices for d in instances])
    seg = np.concatenate([np.full(len(d.point_indices), i) for i, d in enumerate(instances)])
    return scan.scan.xy[idx], scan.scan.features[idx], seg


def instance_features(net: AttentiveInstanceNet, scan: SegmentedScan,
                      instances: Sequence[InstanceDescriptor]) -> List[InstanceDescriptor]:
    """Fill each descriptor's feature vector (inference mode)."""
    if not instances:
        return []
    was_training = net.training
    net.eval()
    try:
        pts, feats, seg = instance_batch(scan, instances)
        out = net.forward(pts, feats, seg, len(instances))
    finally:
        net.train(was_training)
    return [replace(d, feature=out[i].copy()) for i, d in enumerate(instances)]


class SimilarityHead(Module):
    """Sigmoid dot-product attention between two instance sets plus a scalar center encoding."""

    def __init__(self, feature_dim: int = 256, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w_q = Dense(feature_dim, feature_dim, rng, bias=False)
        self.w_k = Dense(feature_dim, feature_dim, rng, bias=False)
        self.center1 = Dense(2, 2, rng)
        self.center_act = ReLU()
        self.center2 = Dense(2, 1, rng)
        self._cache = None

    def center_encoding(self, centers_a: np.ndarray, centers_b: np.ndarray) -> np.ndarray:
        rel = np.asarray(centers_a, float)[:, None, :] - np.asarray(centers_b, float)[None, :, :]
        return self.center2(self.center_act(self.center1(rel)))[..., 0]

    def logits(self, feats_a, centers_a, feats_b, centers_b) -> np.ndarray:
        q = self.w_q(np.asarray(feats_a, float))
        k = self.w_k(np.asarray(feats_b, float))
        self._cache = (q, k)
        return q @ k.T + self.center_encoding(centers_a, centers_b)

    def forward(self, feats_a, centers_a, feats_b, centers_b) -> np.ndarray:
        return sigmoid(self.logits(feats_a, centers_a, feats_b, centers_b))

    __call__ = forward

    def backward(self, d_logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Gradient w.r.t. the logits -> gradients w.r.t. both feature sets."""
        q, k = self._cache
        self.center1.backward(self.center_act.backward(self.center2.backward(d_logits[..., None])))
        return self.w_q.backward(d_logits @ k), self.w_k.backward(d_logits.T @ q)


def similarity_scores(head: SimilarityHead, feats_a, centers_a, feats_b, centers_b) -> np.ndarray:
    return head.forward(feats_a, centers_a, feats_b, centers_b)


def similarity_cost(scores: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    return 1.0 / (np.asarray(scores, float) + epsilon)


@dataclass
class TrackerNetworks:
    instance_net: AttentiveInstanceNet
    similarity: SimilarityHead
    offsets: Optional[OffsetHead] = None

    @classmethod
    def create(cls, config: TrackerConfig = TrackerConfig(), seed: Optional[int] = None, with_offsets: bool = True):
        rng = np.random.default_rng(config.seed if seed is None else seed)
        d, d1, d2 = config.dims
        net = AttentiveInstanceNet(config.dims, config.n_local, rng)
        head = SimilarityHead(d2, rng)
        off = OffsetHead(d, d1, rng) if with_offsets else None
        return cls(net, head, off)

    def eval(self) -> "TrackerNetworks":
        for m in self.modules().values():
            m.eval()
        return self

    def modules(self) -> Dict[str, Module]:
        mods = {"instance_net": self.instance_net, "similarity": self.similarity}
        if self.offsets is not None:
            mods["offsets"] = self.offsets
        return mods

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for prefix, mod in self.modules().items():
            state.update({f"{prefix}.{k}": v for k, v in mod.state_dict().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for prefix, mod in self.modules().items():
            sub = {k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")}
            mod.load_state_dict(sub)

    def similarity_matrix(self, feats_a, centers_a, feats_b, centers_b) -> np.ndarray:
        self.similarity.eval()
        return self.similarity.forward(feats_a, centers_a, feats_b, centers_b)
