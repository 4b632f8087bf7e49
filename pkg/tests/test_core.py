import numpy as np
import pytest
from hypothesis import given, strategies as st

from radartrack.core import (MOVING, STATIC, PreconditionError, RadarPoint, RadarScan, SegmentedScan, TrackerConfig,
                             euclidean_2d, extract_moving_instances, instance_center)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def make_scan(xy, sem, inst, off=None, toff=None, t=0):
    xy = np.asarray(xy, float).reshape(-1, 2)
    n = len(xy)
    scan = RadarScan("s", t, xy, np.zeros(n), np.zeros(n))
    off = np.zeros((n, 2)) if off is None else off
    toff = np.zeros((n, 2)) if toff is None else toff
    return SegmentedScan(scan, sem, inst, off, toff)


def test_instance_center_examples(rng):
    assert np.array_equal(instance_center([(0, 0), (2, 0)]), [1, 0])
    assert np.array_equal(instance_center([(3, 4)]), [3, 4])
    pts = rng.normal(size=(5, 2))
    expected = [sum(p[0] for p in pts) / 5, sum(p[1] for p in pts) / 5]
    assert np.allclose(instance_center(pts), expected, atol=1e-15)


def test_instance_center_rejects_empty_and_nonfinite():
    with pytest.raises(PreconditionError):
        instance_center([])
    with pytest.raises(PreconditionError):
        instance_center([(np.nan, 0.0)])


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20), finite, finite)
def test_instance_center_translation_equivariant(pts, tx, ty):
    pts = np.array(pts)
    shifted = instance_center(pts + [tx, ty])
    assert np.allclose(shifted, instance_center(pts) + [tx, ty], atol=1e-9)


def test_euclidean_examples(rng):
    assert euclidean_2d((0, 0), (3, 4)) == 5.0
    assert euclidean_2d((1.5, -2), (1.5, -2)) == 0.0
    a, b = rng.normal(size=2), rng.normal(size=2)
    assert euclidean_2d(a, b) == pytest.approx(((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) ** 0.5, rel=1e-15)


@given(*(st.tuples(finite, finite) for _ in range(3)))
def test_euclidean_metric_axioms(a, b, c):
    assert euclidean_2d(a, b) == euclidean_2d(b, a)
    assert euclidean_2d(a, c) <= euclidean_2d(a, b) + euclidean_2d(b, c) + 1e-9


def test_extract_examples():
    assert extract_moving_instances(make_scan([(0, 0), (1, 1)], [0, 0], [0, 0])) == []
    (d,) = extract_moving_instances(make_scan([(0, 0), (2, 0)], [1, 1], [1, 1]))
    assert np.array_equal(d.center, [1, 0]) and d.instance_id == 1
    assert np.array_equal(d.feature, np.zeros(256))
    dets = extract_moving_instances(make_scan([(0, 0), (5, 0), (7, 0)], [1, 1, 1], [2, 1, 1]))
    assert [d.instance_id for d in dets] == [1, 2]
    assert [list(d.point_indices) for d in dets] == [[1, 2], [0]]


def test_extract_offset_centers():
    off = np.array([[1.0, 0.0], [3.0, 0.0]])
    toff = np.array([[0.0, 2.0], [0.0, 4.0]])
    (d,) = extract_moving_instances(make_scan([(0, 0), (2, 0)], [1, 1], [4, 4], off, toff))
    assert np.allclose(d.corrected_center, [3, 0])
    assert np.allclose(d.predicted_next_center, [1, 3])
    assert np.allclose(d.displacement, [0, 3])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
def test_extract_partitions_moving_points(ids):
    ids = np.array(ids)
    sem = (ids > 0).astype(int)
    xy = np.arange(2 * len(ids), dtype=float).reshape(-1, 2)
    dets = extract_moving_instances(make_scan(xy, sem, ids))
    seen = np.concatenate([d.point_indices for d in dets]) if dets else np.zeros(0, int)
    assert sorted(seen.tolist()) == np.flatnonzero(sem).tolist()
    assert len(set(seen.tolist())) == len(seen)
    for d in dets:
        assert np.allclose(d.center, xy[d.point_indices].mean(axis=0))


def test_segmented_scan_invariants():
    with pytest.raises(PreconditionError):
        make_scan([(0, 0)], [MOVING], [0])
    with pytest.raises(PreconditionError):
        make_scan([(0, 0)], [STATIC], [3])
    with pytest.raises(PreconditionError):
        make_scan([(0, 0)], [2], [0])
    with pytest.raises(PreconditionError):
        make_scan([(0, 0), (1, 1)], [0], [0])
    scan = make_scan([(0, 0)], [1], [1])
    with pytest.raises(ValueError):
        scan.semantics[0] = 0  # read-only


def test_radar_types():
    p = RadarPoint(1.0, 2.0, 3.0, 4.0)
    assert np.array_equal(p.features, [1, 2, 4, 3])
    with pytest.raises(PreconditionError):
        RadarPoint(np.inf, 0, 0, 0)
    scan = RadarScan.from_points("a", 3, [p, RadarPoint(0, 0, 0, 0)])
    assert len(scan) == 2 and scan.point(0) == p
    assert np.array_equal(scan.features[0], p.features)
    with pytest.raises(PreconditionError):
        RadarScan("a", -1, np.zeros((0, 2)), [], [])


def test_config_defaults_and_validation():
    c = TrackerConfig()
    assert (c.t_d1, c.t_d2, c.t_c, c.b, c.retention, c.n_local, c.dims, c.epsilon, c.min_pts) == \
        (5.0, 10.0, 1.5, 10.0, 12, 6, (4, 64, 256), 1e-6, 1)
    for bad in (dict(t_d1=6, t_d2=5), dict(t_d1=0), dict(t_c=0), dict(min_pts=0), dict(dims=(4, 64))):
        with pytest.raises(PreconditionError):
            TrackerConfig(**bad)
