"""Small dense-network toolkit with hand-written backward passes.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` during ``backward``.
A layer therefore supports one forward/backward pair at a time.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np

BCE_CLAMP = 1e-7


class ShapeError(ValueError):
    pass


class Parameter:
    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=float)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape


class Module:
    """Minimal container: parameters, buffers and submodules found by attribute scan."""

    training = True

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(b, dtype=float) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"missing keys in state: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=float)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data[...] = value
        for name in buffers:
            owner = self
            *path, attr = name.split(".")
            for part in path:
                owner = getattr(owner, part)
            getattr(owner, attr)[...] = np.asarray(state[name], dtype=float)


def _flatten(x: np.ndarray, width: int, what: str) -> np.ndarray:
    if x.shape[-1] != width:
        raise ShapeError(f"{what}: expected last dimension {width}, got {x.shape}")
    return x.reshape(-1, width)


class Dense(Module):
    """y = x W + b, applied over the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(in_dim)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=out_dim)) if bias else None
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x2 = _flatten(x, self.in_dim, "Dense input")
        self._x = x2
        y = x2 @ self.weight.data
        if self.bias is not None:
            y = y + self.bias.data
        return y.reshape(x.shape[:-1] + (self.out_dim,))

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        dy2 = _flatten(np.asarray(dy, dtype=float), self.out_dim, "Dense output gradient")
        if len(dy2) != len(self._x):
            raise ShapeError("gradient rows do not match the cached input")
        self.weight.grad += self._x.T @ dy2
        if self.bias is not None:
            self.bias.grad += dy2.sum(axis=0)
        dx = dy2 @ self.weight.data.T
        return dx.reshape(np.shape(dy)[:-1] + (self.in_dim,))


def dense_forward(layer: Dense, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


def dense_backward(layer: Dense, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward pass for ``layer`` at input ``x``; accumulates into the layer's grads."""
    layer._x = _flatten(np.asarray(x, dtype=float), layer.in_dim, "Dense input")
    return layer.backward(dy)


class BatchNorm1d(Module):
    """Per-feature batch normalization over all leading axes.

    Training mode with a single row falls back to the running statistics.
    Running variance tracks the biased batch variance.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x2 = _flatten(x, self.num_features, "BatchNorm input")
        if self.training and len(x2) >= 2:
            mean = x2.mean(axis=0)
            var = x2.var(axis=0)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var
            batch_stats = True
        else:
            mean, var = self.running_mean.copy(), self.running_var.copy()
            batch_stats = False
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x2 - mean) * inv_std
        self._cache = (xhat, inv_std, batch_stats)
        y = xhat * self.gamma.data + self.beta.data
        return y.reshape(x.shape)

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std, batch_stats = self._cache
        shape = np.shape(dy)
        dy2 = _flatten(np.asarray(dy, dtype=float), self.num_features, "BatchNorm gradient")
        self.gamma.grad += (dy2 * xhat).sum(axis=0)
        self.beta.grad += dy2.sum(axis=0)
        dxhat = dy2 * self.gamma.data
        if not batch_stats:
            return (dxhat * inv_std).reshape(shape)
        n = len(dy2)
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx.reshape(shape)


def batchnorm_forward(bn: BatchNorm1d, x: np.ndarray, mode: str = "train") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    bn.train(mode == "train")
    return bn.forward(x)


def recalibrate_batchnorm(module: Module, run: Callable[[object], object], batches) -> None:
    """Replace running statistics by the plain average of batch statistics.

    ``run(batch)`` performs a forward pass; weights are not touched. The
    exponential average kept during training trails the weights, which
    matters when the last updates are still large.
    """
    norms = [m for m in module.modules() if isinstance(m, BatchNorm1d)]
    saved = [(m.momentum, m.training) for m in norms]
    for m in norms:
        m.running_mean[:] = 0.0
        m.running_var[:] = 1.0
    try:
        for k, batch in enumerate(batches):
            for m in norms:
                m.momentum = 1.0 / (k + 1)
                m.training = True
            run(batch)
    finally:
        for m, (momentum, training) in zip(norms, saved):
            m.momentum, m.training = momentum, training


class ReLU(Module):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    __call__ = forward

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(scores, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(weights: np.ndarray, dweights: np.ndarray, axis: int = -1) -> np.ndarray:
    return weights * (dweights - (weights * dweights).sum(axis=axis, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def segment_softmax(scores: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    """Softmax over rows sharing a segment id, independently per column."""
    seg_max = np.full((n_segments,) + scores.shape[1:], -np.inf)
    np.maximum.at(seg_max, segments, scores)
    e = np.exp(scores - seg_max[segments])
    denom = np.zeros_like(seg_max)
    np.add.at(denom, segments, e)
    return e / denom[segments]


def segment_sum(values: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    out = np.zeros((n_segments,) + values.shape[1:])
    np.add.at(out, segments, values)
    return out


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """(m, k) neighbor indices: self first, then others by (distance, index).

    Instances smaller than ``k`` are padded with extra copies of self, which
    keeps each row's distances non-decreasing.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    m = len(pts)
    if m == 0:
        raise ValueError("need at least one point")
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, -1.0)
    order = np.argsort(d2, axis=1, kind="stable")
    take = min(k, m)
    idx = order[:, :take]
    if take < k:
        pad = np.repeat(np.arange(m)[:, None], k - take, axis=1)
        idx = np.concatenate([pad, idx], axis=1)
    return idx


def knn_sample_group(points: np.ndarray, features: np.ndarray, k: int):
    """Returns neighbor indices (m, k), grouped features (m, k, d) and
    relative positions ``p_i - p_j`` (m, k, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    feats = np.asarray(features, dtype=float).reshape(len(pts), -1)
    idx = knn_indices(pts, k)
    return idx, feats[idx], pts[:, None, :] - pts[idx]


def offset_l1_loss(offsets, centers, points, mask=None, return_grad: bool = False):
    """Mean over points of ``|o_i - (c_i - p_i)|_1``; optional boolean point mask."""
    o = np.asarray(offsets, dtype=float).reshape(-1, 2)
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if not (len(o) == len(c) == len(p)):
        raise ShapeError("offsets, centers and points need equal row counts")
    w = np.ones(len(o)) if mask is None else np.asarray(mask, dtype=float).reshape(-1)
    n = w.sum()
    if n == 0:
        raise ValueError("offset loss over zero points")
    resid = o - (c - p)
    loss = float((np.abs(resid).sum(axis=1) * w).sum() / n)
    if return_grad:
        return loss, np.sign(resid) * w[:, None] / n
    return loss


def bce_loss(predicted, target, mask=None):
    """Masked mean binary cross entropy. Returns (loss, d loss / d predicted)."""
    a = np.asarray(predicted, dtype=float)
    y = np.asarray(target, dtype=float)
    w = np.ones_like(a) if mask is None else np.asarray(mask, dtype=float)
    n = w.sum()
    if n == 0:
        raise ValueError("empty BCE mask")
    ac = np.clip(a, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(w * (y * np.log(ac) + (1 - y) * np.log(1 - ac))).sum() / n
    inside = (a > BCE_CLAMP) & (a < 1.0 - BCE_CLAMP)
    grad = np.where(inside, w * (-y / ac + (1 - y) / (1 - ac)) / n, 0.0)
    return float(loss), grad


def bce_with_logits(logits, target, mask=None):
    """BCE of ``sigmoid(logits)``; gradient taken w.r.t. the logits.

    The gradient ``(sigmoid(z) - y) / n`` stays informative where the clamped
    probability form saturates.
    """
    a = sigmoid(logits)
    loss, _ = bce_loss(a, target, mask)
    w = np.ones_like(a) if mask is None else np.asarray(mask, dtype=float)
    return loss, w * (a - np.asarray(target, dtype=float)) / w.sum()


@dataclass
class AdamW:
    params: list
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-2
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        adamw_step(self, [p.data for p in self.params], [p.grad for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0


def adamw_step(state: AdamW, params, grads):
    """In-place decoupled-weight-decay Adam update; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    state.step_count += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class GradcheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    per_array: Dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradcheck(fn: Callable[[], Tuple[float, Dict[str, np.ndarray]]],
              arrays: Dict[str, np.ndarray],
              tolerance: float = 1e-4,
              step: float = 1e-5,
              max_entries: Optional[int] = None,
              atol: float = 1e-6,
              seed: int = 0) -> GradcheckReport:
    """Compare analytic gradients from ``fn`` with central differences.

    ``fn()`` evaluates a scalar at the current contents of ``arrays`` and
    returns ``(value, {name: gradient})``. Arrays are perturbed in place and
    restored. Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``
    with ``floor = atol * max(1, |f|)``; central-difference roundoff is about
    ``1e-16 * |f| / step``, so the floor keeps exact zeros from reading as errors.
    ``max_entries`` limits the probes per array to a seeded random subset.
    """
    rng = np.random.default_rng(seed)
    value, analytic = fn()
    if not np.isfinite(value):
        raise FloatingPointError("non-finite function value")
    analytic = {k: np.array(v, dtype=float, copy=True) for k, v in analytic.items()}
    floor = atol * max(1.0, abs(value))
    worst_rel, worst_abs, count = 0.0, 0.0, 0
    per_array = {}
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"{name} must be contiguous to be perturbed in place")
        probes = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            probes = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        grad = analytic[name].reshape(-1)
        rel_here = 0.0
        for i in probes:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn()[0]
            flat[i] = orig - step
            f_minus = fn()[0]
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"non-finite value while probing {name}[{i}]")
            num = (f_plus - f_minus) / (2 * step)
            err = abs(grad[i] - num)
            rel = err / max(abs(grad[i]), abs(num), floor)
            rel_here = max(rel_here, rel)
            worst_abs = max(worst_abs, err)
            count += 1
        per_array[name] = rel_here
        worst_rel = max(worst_rel, rel_here)
    return GradcheckReport(worst_rel, worst_abs, count, per_array, tolerance)


def save_checkpoint(path, state: Dict[str, np.ndarray]) -> None:
    """Flat key -> {shape, data} JSON, keys sorted."""
    payload = {k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=float).reshape(-1).tolist()}
               for k, v in sorted(state.items())}
    Path(path).write_text(json.dumps(payload, indent=None, sort_keys=True))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    return {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in payload.items()}
