import dataclasses

import numpy as np
from hypothesis import given, strategies as st

from radartrack.association import run_tracker
from radartrack.baselines import KalmanTrack, box_iou, center_doppler_tracker, hull_box, kalman_iou_tracker
from radartrack.core import RadarScan, SegmentedScan, TrackerConfig
from radartrack.metrics import SequenceLabels, evaluate
from radartrack.simulator import AgentSpec, ScenarioConfig, generate_sequence, ground_truth


def _labels(sim, ids=None):
    return SequenceLabels([s.segmented.semantics for s in sim], ids if ids is not None else [s.track_ids for s in sim])


def test_center_doppler_radial_agent_single_track():
    sim = generate_sequence(ScenarioConfig((AgentSpec((6.0, 8.0), (6.0, 8.0)),), scans=15, clutter_rate=4))
    ids = center_doppler_tracker(ground_truth(sim))
    assert {int(i) for s, i in zip(sim, ids) for i in i[s.segmented.semantics == 1]} == {1}


def test_center_doppler_empty_scans():
    empty = SegmentedScan(RadarScan("e", 0, np.zeros((0, 2)), np.zeros(0), np.zeros(0)),
                          np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2)), np.zeros((0, 2)))
    out = center_doppler_tracker([empty, dataclasses.replace(empty, scan=dataclasses.replace(empty.scan, t=1))])
    assert [len(o) for o in out] == [0, 0]


def test_tangential_agent_degrades_center_doppler():
    # fast tangential motion: Doppler is ~0, so the center baseline cannot follow the agent
    sim = generate_sequence(ScenarioConfig((AgentSpec((-30.0, 40.0), (24.0, 0.0), mean_points=1, extent=(0.5, 0.5)),),
                                           scans=6))
    gt = _labels(sim)
    cd = evaluate(_labels(sim, center_doppler_tracker(ground_truth(sim))), gt)["s_assoc"]
    ours = evaluate(_labels(sim, run_tracker(ground_truth(sim), TrackerConfig(use_similarity=False))), gt)["s_assoc"]
    assert cd < ours == 1.0


def test_box_iou_examples():
    b = np.array([0.0, 0.0, 2.0, 1.0])
    assert box_iou(b, b) == 1.0
    assert box_iou(b, [1.0, 0.0, 3.0, 1.0]) == 1 / 3
    point = hull_box([[1.0, 1.0]])
    assert box_iou(point, point) == 0.0


def test_kalman_matches_coincident_boxes():
    xy = np.array([[0.0, 10.0], [2.0, 11.0], [1.0, 10.5]])
    scans = [SegmentedScan(RadarScan("k", t, xy, np.zeros(3), np.zeros(3)), np.ones(3, int), np.ones(3, int),
                           np.zeros((3, 2)), np.zeros((3, 2))) for t in range(3)]
    ids = kalman_iou_tracker(scans)
    assert all(set(i.tolist()) == {1} for i in ids)


def test_kalman_single_points_never_match():
    sim = generate_sequence(ScenarioConfig((AgentSpec((0.0, 20.0), (1.0, 0.0), mean_points=1),), scans=8))
    ids = kalman_iou_tracker(ground_truth(sim))
    assert [int(i.max()) for i in ids] == list(range(1, 9))


def test_kalman_zero_noise_prediction_is_exact():
    box = np.array([9.0, 19.0, 11.0, 21.0])
    k = KalmanTrack.start(1, box, 0.1)
    k.state[2:] = (3.0, -1.0)
    k.predict(0.5, 0.0)
    assert np.allclose((k.box[:2] + k.box[2:]) / 2, (11.5, 19.5))


@given(st.integers(0, 10_000))
def test_kalman_covariance_stays_psd(seed):
    r = np.random.default_rng(seed)
    k = KalmanTrack.start(1, np.array([0.0, 0.0, 1.0, 1.0]), float(r.uniform(0.01, 1)))
    for _ in range(20):
        k.predict(float(r.uniform(0.1, 1)), float(r.uniform(0, 2)))
        if r.random() < 0.7:
            c = r.normal(size=2) * 5
            k.update(np.concatenate([c - 0.5, c + 0.5]), float(r.uniform(0.01, 1)))
        assert np.array_equal(k.covariance, k.covariance.T)
        assert np.linalg.eigvalsh(k.covariance).min() >= -1e-9
