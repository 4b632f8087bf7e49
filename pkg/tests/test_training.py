import numpy as np
import pytest

from radartrack.experiments import overfit_scenario, separable_sequences
from radartrack.nets import AttentiveInstanceNet, OffsetHead, SimilarityHead
from radartrack.nn import BatchNorm1d, Dense, recalibrate_batchnorm
from radartrack.simulator import AgentSpec, ScenarioConfig, generate_sequence
from radartrack.training import (_collate, _offset_batch, offset_losses, offset_mae, prepare_pairs, scan_pairs,
                                 similarity_loss, train_offsets, train_similarity)


@pytest.fixture(scope="module")
def pairs():
    return prepare_pairs(scan_pairs(separable_sequences(1)))


def _small_nets(seed=0):
    rng = np.random.default_rng(seed)
    return AttentiveInstanceNet((4, 8, 16), 6, rng), SimilarityHead(16, rng)


def test_targets_follow_ground_truth_tracks(pairs):
    p = pairs[0]
    t = p.targets()
    assert t.shape == (p.query.size, p.key.size)
    # static clusters (track 0) are never positives; each moving track matches at most once
    assert not t[p.query.track_ids == 0].any() and not t[:, p.key.track_ids == 0].any()
    assert np.all(t.sum(axis=1) <= 1)
    assert t.sum() == 2  # both agents visible in both scans


def test_batch_mask_is_block_diagonal(pairs):
    b = _collate(pairs[:3])
    sizes_q = [p.query.size for p in pairs[:3]]
    sizes_k = [p.key.size for p in pairs[:3]]
    assert b.mask.shape == (sum(sizes_q), sum(sizes_k))
    assert b.mask.sum() == sum(a * c for a, c in zip(sizes_q, sizes_k))
    assert np.all(b.targets <= b.mask)


def test_zero_learning_rate_leaves_parameters_unchanged(pairs):
    net, head = _small_nets()
    before = [p.data.copy() for p in net.parameters() + head.parameters()]
    train_similarity(net, head, pairs, steps=3, batch_size=4, lr=0.0)
    after = [p.data for p in net.parameters() + head.parameters()]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_no_positive_pairs_is_an_error(pairs):
    net, head = _small_nets()
    static = ScenarioConfig((), scans=3, clutter_rate=6)
    negatives = prepare_pairs(scan_pairs([generate_sequence(static)]))
    with pytest.raises(ValueError):
        train_similarity(net, head, negatives, steps=1)
    with pytest.raises(ValueError):
        train_similarity(net, head, [], steps=1)


def test_similarity_loss_decreases(pairs):
    net, head = _small_nets(1)
    res = train_similarity(net, head, pairs, steps=40, batch_size=8, lr=3e-3)
    assert res.steps == 40
    assert np.mean(res.losses[-10:]) < np.mean(res.losses[:10])
    assert not net.training and not head.training


def test_training_is_seeded(pairs):
    runs = []
    for _ in range(2):
        net, head = _small_nets(2)
        runs.append(train_similarity(net, head, pairs, steps=5, batch_size=4, seed=7).losses)
    assert runs[0] == runs[1]


def test_offset_heads_overfit_static_instance():
    scans = generate_sequence(overfit_scenario())
    head = OffsetHead(4, 64, np.random.default_rng(0))
    train_offsets(head, scans, steps=500)
    mae_o, mae_t = offset_mae(head, scans)
    assert mae_o < 0.05 and mae_t < 0.05


def test_temporal_minus_standard_offset_tracks_motion():
    agent = AgentSpec((10.0, 20.0), (2.0, 0.0), extent=(0.2, 0.2), mean_points=6)
    scans = generate_sequence(ScenarioConfig((agent,), scans=9, seed=0))[:-1]
    head = OffsetHead(4, 64, np.random.default_rng(0))
    train_offsets(head, scans, steps=500)
    feats, xy, _, _, _ = _offset_batch(scans)
    o, ot = head(feats, xy)
    assert np.allclose((ot - o).mean(axis=0), (1.0, 0.0), atol=0.05)


def test_temporal_loss_ignores_undefined_targets():
    agent = AgentSpec((0.0, 20.0), (1.0, 0.0), death=2)
    scans = generate_sequence(ScenarioConfig((agent,), scans=3, seed=0))
    head = OffsetHead(4, 8, np.random.default_rng(0))
    head.eval()
    _, l_all = offset_losses(head, scans[:2])
    _, l_first = offset_losses(head, scans[:1])
    assert l_all == l_first  # the dying scan contributes no temporal term
    with pytest.raises(ValueError):
        train_offsets(head, [scans[2]], steps=1)


def test_recalibration_sets_population_statistics(rng):
    bn = BatchNorm1d(3)
    batches = [rng.normal(loc=4.0, scale=2.0, size=(50, 3)) for _ in range(6)]
    bn.eval()
    recalibrate_batchnorm(bn, bn, batches)
    assert not bn.training and bn.momentum == 0.1
    assert np.allclose(bn.running_mean, np.mean([b.mean(axis=0) for b in batches], axis=0))
    assert np.allclose(bn.running_var, np.mean([b.var(axis=0) for b in batches], axis=0))
