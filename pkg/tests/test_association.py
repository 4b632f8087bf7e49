import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radartrack.association import (RadarTracker, TrackerState, associate_scan, build_cost, dbscan, hungarian,
                                    lifecycle_step, run_tracker)
from radartrack.core import InstanceDescriptor, Track, TrackerConfig
from radartrack.simulator import AgentSpec, ScenarioConfig, generate_sequence, ground_truth
from oracles import brute_force_min_cost, brute_force_partial, canonical_partition, union_find_components

GEOMETRIC = TrackerConfig(use_similarity=False)


def det(iid, center, step=(0.0, 0.0)):
    c = np.asarray(center, float)
    return InstanceDescriptor(iid, np.array([iid]), c, c, c + np.asarray(step, float), np.zeros(4))


def track(tid, predicted, step=(0.0, 0.0)):
    return Track(tid, det(tid, np.asarray(predicted) - np.asarray(step), step), np.asarray(predicted, float))


# -- hungarian ------------------------------------------------------------

def test_hungarian_examples():
    assert hungarian([[0, 9], [9, 0]]) == [(0, 0), (1, 1)]
    assert hungarian([[4]]) == [(0, 0)]
    assert hungarian(np.zeros((0, 3))) == []
    assert hungarian([[1, 2]], forbidden=[[True, True]]) == []


def test_hungarian_ties_go_to_lowest_column():
    assert hungarian(np.ones((2, 2))) == [(0, 0), (1, 1)]


def test_hungarian_rectangular_leaves_leftovers():
    pairs = hungarian([[5, 1, 3], [2, 8, 0]])
    assert pairs == [(0, 1), (1, 2)]
    tall = hungarian([[5, 2], [1, 8], [0, 0]])
    assert len(tall) == 2 and len({c for _, c in tall}) == 2


def test_hungarian_random_5x5_matches_enumeration(rng):
    for _ in range(20):
        cost = rng.integers(0, 50, size=(5, 5))
        pairs = hungarian(cost)
        assert sum(cost[i, j] for i, j in pairs) == brute_force_min_cost(cost)


@given(st.integers(0, 10_000))
def test_hungarian_forbidden_maximizes_cardinality_then_cost(seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(1, 6, size=2)
    cost = r.integers(-20, 20, size=(a, b)).astype(float)
    forbidden = r.random((a, b)) < 0.4
    pairs = hungarian(cost, forbidden)
    assert len({i for i, _ in pairs}) == len({j for _, j in pairs}) == len(pairs)
    assert not any(forbidden[i, j] for i, j in pairs)
    size, total = brute_force_partial(cost, forbidden)
    assert len(pairs) == size
    assert sum(cost[i, j] for i, j in pairs) == total


def test_hungarian_rejects_nonfinite_allowed_cost():
    with pytest.raises(ValueError):
        hungarian([[np.nan, 1.0]])
    assert hungarian([[np.inf, 1.0]], forbidden=[[True, False]]) == [(0, 1)]


# -- dbscan ---------------------------------------------------------------

def test_dbscan_examples():
    assert dbscan([(0, 0), (5, 0)], 10).tolist() == [0, 0]
    assert dbscan([(0, 0), (25, 0)], 10).tolist() == [0, 1]
    assert dbscan([(0, 0), (8, 0), (16, 0)], 10).tolist() == [0, 0, 0]
    assert dbscan(np.zeros((0, 2)), 10).tolist() == []
    assert dbscan([(0, 0), (10, 0)], 10).tolist() == [0, 0]  # boundary is inclusive
    with pytest.raises(ValueError):
        dbscan([(0, 0)], 0)


@given(st.integers(0, 10_000))
def test_dbscan_equals_connected_components(seed):
    r = np.random.default_rng(seed)
    pts = r.uniform(0, 60, size=(int(r.integers(1, 30)), 2))
    eps = float(r.uniform(1, 15))
    assert canonical_partition(dbscan(pts, eps)) == canonical_partition(union_find_components(pts, eps))


def test_dbscan_noise_with_higher_min_pts():
    labels = dbscan([(0, 0), (1, 0), (50, 0)], 2, min_pts=2)
    assert labels.tolist() == [0, 0, -1]


# -- cost and gating --------------------------------------------------------

def test_build_cost_regimes():
    p = build_cost([track(1, (0, 0))], [det(1, (0, 0)), det(2, (7, 0)), det(3, (0, 12))], TrackerConfig())
    assert np.allclose(p.cost, [[0, 7, 12]])
    assert p.forbidden.tolist() == [[False, False, True]]
    assert p.gated.tolist() == [[False, True, False]]
    geo = build_cost([track(1, (0, 0))], [det(2, (7, 0))], GEOMETRIC)
    assert not geo.gated.any()


def test_associate_trivial_cases():
    state = TrackerState(GEOMETRIC, [track(1, (3, 4))])
    r = associate_scan(state, [det(1, (3, 4))])
    assert r.matches == [(0, 0)] and r.unmatched_tracks == [] and r.unmatched_detections == []
    r = associate_scan(TrackerState(GEOMETRIC), [det(1, (0, 0)), det(2, (1, 1))])
    assert r.matches == [] and r.unmatched_detections == [0, 1]
    r = associate_scan(state, [])
    assert r.unmatched_tracks == [0]


def test_crossing_similarity_gate_preserves_identity():
    # identity pairs are 9 m apart, swapped pairs 7 m: distance alone prefers the swap,
    # both swapped pairs sit in the gated band and the oracle similarity rejects them
    tracks = [track(1, (0, 0)), track(2, (16, 0))]
    dets = [det(1, (9, 0)), det(2, (7, 0))]
    sim = np.array([[1.0, 1000.0], [1000.0, 1.0]])
    geo = associate_scan(TrackerState(GEOMETRIC, tracks), dets)
    assert geo.matches == [(0, 1), (1, 0)]
    r = associate_scan(TrackerState(TrackerConfig(), tracks), dets, sim)
    assert r.matches == [] and r.rejected == [(0, 1), (1, 0)]
    assert r.unmatched_detections == [0, 1] and r.unmatched_tracks == [0, 1]


def test_gate_accepts_similar_pair():
    r = associate_scan(TrackerState(TrackerConfig(), [track(1, (0, 0))]), [det(1, (7, 0))], np.array([[1.2]]))
    assert r.matches == [(0, 0)]
    with pytest.raises(ValueError):
        associate_scan(TrackerState(TrackerConfig(), [track(1, (0, 0))]), [det(1, (7, 0))])


@given(st.integers(0, 10_000))
def test_associate_invariants(seed):
    r = np.random.default_rng(seed)
    cfg = TrackerConfig()
    tracks = [track(i + 1, r.uniform(0, 60, 2)) for i in range(int(r.integers(0, 7)))]
    dets = [det(j + 1, r.uniform(0, 60, 2)) for j in range(int(r.integers(0, 7)))]
    sim = r.uniform(1, 2, size=(len(tracks), len(dets)))
    res = associate_scan(TrackerState(cfg, tracks), dets, sim)
    rows = [i for i, _ in res.matches]
    cols = [j for _, j in res.matches]
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    for i, j in res.matches:
        d = np.linalg.norm(tracks[i].predicted_center - dets[j].center)
        assert d <= cfg.t_d2
        assert res.clusters[i] == res.clusters[len(tracks) + j]
        if d > cfg.t_d1:
            assert sim[i, j] <= cfg.t_c
    assert sorted(rows + res.unmatched_tracks) == list(range(len(tracks)))
    assert sorted(cols + res.unmatched_detections) == list(range(len(dets)))


def test_clusters_solved_independently():
    # the global optimum would assign across the 30 m gap if it were allowed; it is not
    tracks = [track(1, (0, 0)), track(2, (30, 0))]
    dets = [det(1, (1, 0))]
    res = associate_scan(TrackerState(GEOMETRIC, tracks), dets)
    assert res.matches == [(0, 0)]
    assert res.clusters[0] != res.clusters[1]


# -- lifecycle ------------------------------------------------------------

def _step(state, dets, t):
    return lifecycle_step(state, dets, associate_scan(state, dets), t)


def test_track_retired_after_thirteen_misses():
    state = TrackerState(GEOMETRIC)
    _step(state, [det(1, (0, 0))], 0)
    for t in range(1, 13):
        _step(state, [], t)
    assert [tr.track_id for tr in state.tracks] == [1] and state.tracks[0].misses == 12
    _step(state, [], 13)
    assert state.tracks == []


def test_occluded_track_advances_by_displacement():
    state = TrackerState(GEOMETRIC)
    _step(state, [det(1, (0, 0), step=(1, 0))], 0)
    for t in range(1, 4):
        _step(state, [], t)
    assert np.allclose(state.tracks[0].predicted_center, (4, 0))  # one scan ahead plus three propagated
    ids = _step(state, [det(7, (4, 0), step=(1, 0))], 4)
    assert ids == [1]


def test_matched_track_prediction_uses_temporal_offset():
    state = TrackerState(GEOMETRIC)
    _step(state, [det(1, (2, 3), step=(0.5, -1))], 0)
    assert np.allclose(state.tracks[0].predicted_center, (2.5, 2))
    raw = TrackerState(dataclasses.replace(GEOMETRIC, use_temporal_offset=False))
    _step(raw, [det(1, (2, 3), step=(0.5, -1))], 0)
    assert np.allclose(raw.tracks[0].predicted_center, (2, 3))


def test_new_ids_are_fresh_and_never_reused():
    state = TrackerState(GEOMETRIC)
    assert _step(state, [det(1, (0, 0)), det(2, (50, 0))], 0) == [1, 2]
    assert _step(state, [det(1, (0, 0)), det(2, (50, 0)), det(3, (100, 100))], 1) == [1, 2, 3]
    seen = {1, 2, 3}
    for t in range(2, 16):
        _step(state, [], t)
    assert state.tracks == []
    ids = _step(state, [det(1, (0, 0))], 16)
    assert ids == [4] and ids[0] not in seen


# -- full tracker -----------------------------------------------------------

def test_run_tracker_rejects_non_monotone_time():
    seq = ground_truth(generate_sequence(ScenarioConfig((AgentSpec((0.0, 20.0), (1.0, 0.0)),), scans=3)))
    with pytest.raises(ValueError):
        run_tracker([seq[1], seq[0]], GEOMETRIC)
    with pytest.raises(ValueError):
        RadarTracker(TrackerConfig())  # similarity needs networks


def test_run_tracker_single_agent_one_id():
    sim = generate_sequence(ScenarioConfig((AgentSpec((-10.0, 20.0), (4.0, 1.0)),), scans=20, clutter_rate=5))
    ids = run_tracker(ground_truth(sim), GEOMETRIC)
    moving = np.concatenate([i[s.segmented.semantics == 1] for i, s in zip(ids, sim)])
    static = np.concatenate([i[s.segmented.semantics == 0] for i, s in zip(ids, sim)])
    assert set(moving.tolist()) == {1}
    assert not static.any()


def test_reentry_after_fifteen_scans_gets_new_id():
    agent = AgentSpec((0.0, 20.0), (2.0, 0.0), occlusions=((5, 20),))
    sim = generate_sequence(ScenarioConfig((agent,), scans=25))
    ids = run_tracker(ground_truth(sim), GEOMETRIC)
    before = {int(i.max()) for i in ids[:5]}
    after = {int(i.max()) for i in ids[20:]}
    assert before == {1} and after == {2}


def test_well_separated_agents_tracked_exactly():
    agents = tuple(AgentSpec((-20.0, 15.0 + 25.0 * k), (3.0 + k, 0.5)) for k in range(3))
    sim = generate_sequence(ScenarioConfig(agents, scans=20, clutter_rate=3))
    ids = run_tracker(ground_truth(sim), GEOMETRIC)
    mapping = {}
    for pred, s in zip(ids, sim):
        for p, g in zip(pred.tolist(), s.track_ids.tolist()):
            assert (p == 0) == (g == 0)
            if g:
                assert mapping.setdefault(g, p) == p
    assert len(set(mapping.values())) == 3
