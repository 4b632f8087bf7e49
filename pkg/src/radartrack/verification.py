"""Finite-difference verification of every hand-written backward pass.

Each check draws random inputs from its seed, contracts the output with a
random weight tensor to get a scalar, and compares analytic gradients of all
inputs and parameters against central differences.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List

import numpy as np

from .nets import AttentiveInstanceNet, OffsetHead, SimilarityHead, TransformerBlock
from .training import _Batch, similarity_loss
from .nn import BatchNorm1d, Dense, GradcheckReport, Module, bce_loss, bce_with_logits, gradcheck, knn_indices, offset_l1_loss

MAX_PROBES = 30


def _generic_norms(module: Module, rng: np.random.Generator) -> None:
    """Move batch-norm affine parameters off their (1, 0) init.

    With complete, symmetric kNN neighborhoods the positional batch norm maps
    the self rows exactly onto ``beta``; at ``beta = 0`` that is the ReLU kink,
    where no finite difference can agree with any one-sided derivative.
    """
    for m in module.modules():
        if isinstance(m, BatchNorm1d):
            m.gamma.data[:] = rng.uniform(0.5, 1.5, size=m.num_features)
            m.beta.data[:] = rng.normal(0.0, 0.5, size=m.num_features)


def _module_check(module: Module, run: Callable[[], np.ndarray], backward: Callable[[np.ndarray], Dict[str, np.ndarray]],
                  inputs: Dict[str, np.ndarray], rng: np.random.Generator, seed: int) -> GradcheckReport:
    """Scalar ``sum(w * run())``; ``backward(w)`` returns gradients of ``inputs``."""
    weight = {}

    def fn():
        module.zero_grad()
        out = run()
        if "w" not in weight:
            weight["w"] = rng.normal(size=out.shape)
        grads = dict(backward(weight["w"]))
        grads.update({name: p.grad for name, p in module.named_parameters()})
        return float((weight["w"] * out).sum()), grads

    arrays = dict(inputs)
    arrays.update({name: p.data for name, p in module.named_parameters()})
    return gradcheck(fn, arrays, max_entries=MAX_PROBES, seed=seed)


def check_dense(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    layer = Dense(5, 4, rng)
    x = rng.normal(size=(7, 5))
    return _module_check(layer, lambda: layer(x), lambda w: {"x": layer.backward(w)}, {"x": x}, rng, seed)


def check_batchnorm_eval(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    bn = BatchNorm1d(4)
    bn.gamma.data[:] = rng.normal(size=4)
    bn.beta.data[:] = rng.normal(size=4)
    bn.running_mean[:] = rng.normal(size=4)
    bn.running_var[:] = rng.uniform(0.5, 2.0, size=4)
    bn.eval()
    x = rng.normal(size=(6, 4))
    return _module_check(bn, lambda: bn(x), lambda w: {"x": bn.backward(w)}, {"x": x}, rng, seed)


def check_batchnorm_train(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    bn = BatchNorm1d(3)
    bn.gamma.data[:] = rng.normal(size=3)
    x = rng.normal(size=(8, 3))
    return _module_check(bn, lambda: bn(x), lambda w: {"x": bn.backward(w)}, {"x": x}, rng, seed)


def check_attention(seed: int) -> GradcheckReport:
    """Full transformer block (expansion, vector attention with positional MLP, output layer, skip)."""
    rng = np.random.default_rng(seed)
    block = TransformerBlock(3, 8, rng)
    _generic_norms(block, rng)
    points = rng.normal(scale=2.0, size=(7, 2))
    x = rng.normal(size=(7, 3))
    nb = knn_indices(points, 6)
    return _module_check(block, lambda: block(points, x, nb), lambda w: {"x": block.backward(w)}, {"x": x}, rng, seed)


def check_aggregation(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    net = AttentiveInstanceNet((3, 4, 6), 6, rng)
    x_out = rng.normal(size=(9, 6))
    segments = np.array([0, 0, 1, 2, 2, 2, 1, 0, 2])
    # only the aggregation layer participates; other parameters get zero gradient
    return _module_check(net, lambda: net.aggregate(x_out, segments, 3),
                         lambda w: {"x_out": net.aggregate_backward(w)}, {"x_out": x_out}, rng, seed)


def check_instance_net(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    net = AttentiveInstanceNet((4, 6, 8), 3, rng)
    _generic_norms(net, rng)
    points = rng.normal(scale=3.0, size=(8, 2))
    feats = rng.normal(scale=5.0, size=(8, 4))
    segments = np.array([0, 0, 0, 1, 1, 2, 0, 1])
    return _module_check(net, lambda: net(points, feats, segments, 3),
                         lambda w: {"features": net.backward(w)}, {"features": feats}, rng, seed)


def check_similarity_head(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    head = SimilarityHead(6, rng)
    fa, fb = rng.normal(size=(3, 6)), rng.normal(size=(4, 6))
    ca, cb = rng.normal(scale=3.0, size=(3, 2)), rng.normal(scale=3.0, size=(4, 2))

    def backward(w):
        a = head(fa, ca, fb, cb)
        d_fa, d_fb = head.backward(w * a * (1 - a))
        return {"feats_a": d_fa, "feats_b": d_fb}

    def run():
        return head(fa, ca, fb, cb)

    return _module_check(head, run, backward, {"feats_a": fa, "feats_b": fb}, rng, seed)


def check_offset_head(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    head = OffsetHead(4, 8, rng)
    _generic_norms(head, rng)
    feats, coords = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
    return _module_check(head, lambda: np.concatenate(head(feats, coords), axis=1),
                         lambda w: head.backward(w[:, :2], w[:, 2:]) or {}, {}, rng, seed)


def check_bce(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.05, 0.95, size=(4, 5))
    target = (rng.random((4, 5)) < 0.4).astype(float)
    mask = (rng.random((4, 5)) < 0.8).astype(float)
    mask[0, 0] = 1.0
    logits = rng.normal(scale=2.0, size=(4, 5))

    def fn():
        l1, g1 = bce_loss(pred, target, mask)
        l2, g2 = bce_with_logits(logits, target, mask)
        return l1 + l2, {"pred": g1, "logits": g2}

    return gradcheck(fn, {"pred": pred, "logits": logits})


def check_offset_loss(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(8, 2))
    centers = rng.normal(size=(8, 2))
    offsets = rng.normal(size=(8, 2))
    mask = rng.random(8) < 0.7
    mask[0] = True

    def fn():
        loss, grad = offset_l1_loss(offsets, centers, pts, mask=mask, return_grad=True)
        return loss, {"offsets": grad}

    return gradcheck(fn, {"offsets": offsets})


def check_similarity_loss(seed: int) -> GradcheckReport:
    """Full training loss: instance net, similarity head, masked BCE."""
    rng = np.random.default_rng(seed)
    net = AttentiveInstanceNet((4, 5, 6), 3, rng)
    head = SimilarityHead(6, rng)
    _generic_norms(net, rng)
    points = rng.normal(scale=3.0, size=(10, 2))
    segments = np.array([0, 0, 1, 1, 1, 2, 3, 3, 4, 4])
    batch = _Batch(points, rng.normal(scale=5.0, size=(10, 4)), segments, 5, np.array([0, 1]), np.array([2, 3, 4]),
                   rng.normal(size=(2, 2)), rng.normal(size=(3, 2)),
                   np.array([[1.0, 0, 0], [0, 0, 0]]), np.ones((2, 3)))
    params = list(net.named_parameters("net.")) + list(head.named_parameters("head."))

    def fn():
        net.zero_grad()
        head.zero_grad()
        loss = similarity_loss(net, head, batch)
        return loss, {name: p.grad for name, p in params}

    return gradcheck(fn, {name: p.data for name, p in params}, max_entries=MAX_PROBES, seed=seed)


CHECKS: Dict[str, Callable[[int], GradcheckReport]] = {
    "dense": check_dense,
    "batchnorm_eval": check_batchnorm_eval,
    "batchnorm_train": check_batchnorm_train,
    "attention": check_attention,
    "aggregation": check_aggregation,
    "instance_net": check_instance_net,
    "similarity_head": check_similarity_head,
    "offset_head": check_offset_head,
    "bce": check_bce,
    "offset_l1": check_offset_loss,
    "similarity_loss": check_similarity_loss,
}


def gradient_suite(seeds: Iterable[int] = range(20), names: Iterable[str] = None) -> Dict[str, List[GradcheckReport]]:
    names = list(CHECKS) if names is None else list(names)
    seeds = list(seeds)
    return {name: [CHECKS[name](s) for s in seeds] for name in names}
