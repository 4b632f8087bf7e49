import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radartrack.metrics import SequenceLabels, evaluate, id_switches, iou_mov, lstq, lstq_from_scores, s_assoc, s_cls
from oracles import enumerate_scores


def test_iou_mov_examples():
    gt = np.array([1, 1, 1, 1, 1, 0, 0, 0, 0, 0])
    pred = np.array([1, 1, 1, 0, 0, 1, 0, 0, 0, 0])  # 3 TP, 1 FP, 2 FN
    assert iou_mov(pred, gt) == 0.5
    assert iou_mov(gt, gt) == 1.0
    assert iou_mov(np.zeros(10, int), gt) == 0.0
    with pytest.raises(ValueError):
        iou_mov(pred[:3], gt)


def test_s_cls_examples():
    # moving: 3 TP, 1 FP, 1 FN -> 0.6; static: 8 TP with the same errors -> 0.8
    gt = np.array([1, 1, 1, 1, 0] + [0] * 8)
    pred = np.array([1, 1, 1, 0, 1] + [0] * 8)
    assert s_cls(pred, gt) == pytest.approx(0.7, abs=1e-15)
    assert s_cls(gt, gt) == 1.0
    assert s_cls(1 - gt, gt) == 0.0


def test_s_assoc_examples():
    gt = np.array([5, 5, 5, 5, 0])
    assert s_assoc(gt, gt) == 1.0
    assert s_assoc(np.zeros(5, int), gt) == 0.0
    # one ground-truth track of 4 points over two scans split into two predicted tracks of 2
    assert s_assoc(np.array([1, 1, 2, 2, 0]), gt) == 0.5


def test_lstq_examples():
    assert lstq_from_scores(1, 1) == 1
    assert round(lstq_from_scores(0.927, 0.482), 3) == 0.668
    assert lstq_from_scores(1, 0.25) == 0.5
    assert lstq_from_scores(0, 0.9) == 0


def _toy(r, scans=3, max_points=20):
    n = [int(r.integers(1, max_points + 1)) for _ in range(scans)]
    gt_sem = [r.integers(0, 2, size=k) for k in n]
    pred_sem = [r.integers(0, 2, size=k) for k in n]
    gt_ids = [np.where(s == 1, r.integers(1, 4, size=len(s)), 0) for s in gt_sem]
    pred_ids = [np.where(s == 1, r.integers(1, 5, size=len(s)), 0) for s in pred_sem]
    return SequenceLabels(pred_sem, pred_ids), SequenceLabels(gt_sem, gt_ids)


@given(st.integers(0, 100_000))
def test_scores_match_set_enumeration(seed):
    pred, gt = _toy(np.random.default_rng(seed))
    ref = enumerate_scores([s.tolist() for s in pred.semantics], [s.tolist() for s in gt.semantics],
                           [s.tolist() for s in pred.track_ids], [s.tolist() for s in gt.track_ids])
    rep = evaluate(pred, gt)
    assert abs(rep["s_cls"] - ref[0]) <= 1e-12
    assert abs(rep["s_assoc"] - ref[1]) <= 1e-12
    assert abs(lstq(pred, gt) - ref[2]) <= 1e-12
    for key in ("lstq", "s_assoc", "s_cls", "iou_mov"):
        assert 0.0 <= rep[key] <= 1.0


@given(st.integers(0, 100_000))
def test_s_assoc_invariant_to_renaming(seed):
    r = np.random.default_rng(seed)
    pred, gt = _toy(r)
    perm = np.concatenate([[0], r.permutation(np.arange(1, 5)) + 10])
    renamed = SequenceLabels(pred.semantics, [perm[t] for t in pred.track_ids])
    assert evaluate(renamed, gt)["s_assoc"] == evaluate(pred, gt)["s_assoc"]


@given(st.integers(0, 100_000))
def test_perfect_prediction_scores_one(seed):
    _, gt = _toy(np.random.default_rng(seed))
    rep = evaluate(gt, gt)
    assert rep["lstq"] == 1.0 and rep["s_assoc"] == 1.0 and rep["s_cls"] == 1.0 and rep["num_switches"] == 0


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_lstq_monotone(a, b, c):
    lo, hi = sorted((b, c))
    assert lstq_from_scores(a, lo) <= lstq_from_scores(a, hi)
    assert lstq_from_scores(lo, a) <= lstq_from_scores(hi, a)


def test_id_switches_counts_changes():
    gt = SequenceLabels([[1, 1]] * 4, [[3, 3]] * 4)
    pred = SequenceLabels([[1, 1]] * 4, [[1, 1], [1, 1], [2, 2], [1, 1]])
    assert id_switches(pred, gt) == 2
    rep = evaluate(pred, gt)
    assert rep["num_tracks_pred"] == 2 and rep["num_tracks_gt"] == 1


def test_multiple_sequences_keep_ids_apart():
    a = SequenceLabels([[1, 1]], [[1, 1]])
    b = SequenceLabels([[1, 1]], [[1, 1]])
    # the same id in two sequences names two different tracks
    assert evaluate([a, b], [a, b])["num_tracks_gt"] == 2
    merged = SequenceLabels([[1, 1]], [[2, 2]])
    assert evaluate([a, merged], [a, b])["s_assoc"] == 1.0
    with pytest.raises(ValueError):
        evaluate([a], [a, b])
