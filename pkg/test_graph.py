"""Tests for samples and per-step graph features."""
import math

import numpy as np
import pytest

from conftest import make_sample, straight_sample
from laneattn.errors import DomainError
from laneattn.geometry import LanePolyline, project, resample_ahead
from laneattn.graph import TrackSample, build_features, normalize_sample, step_features_at
from laneattn.scenarios import ScenarioSpec, generate


def test_stationary_vehicle_has_zero_deltas():
    sample = make_sample([(2.0, 1.0)] * 4, [(2.0, 1.0)] * 2, [[(-10.0, 0.0), (10.0, 0.0)]])
    feats = build_features(sample)
    assert len(feats) == 3
    for f in feats:
        np.testing.assert_array_equal(f.delta, [0.0, 0.0])
        np.testing.assert_allclose(f.offsets, feats[0].offsets)


def test_vehicle_on_lane_center():
    feats = build_features(straight_sample(n_obs=4, lanes_y=(0.0,)))
    for f in feats:
        np.testing.assert_allclose(f.delta, [1.0, 0.0])
        np.testing.assert_allclose(f.offsets, [[0.0, 0.0]], atol=1e-12)


def test_pos_equal_prev_gives_zero_delta():
    lane = LanePolyline.from_points(0, [(0.0, 0.0), (10.0, 0.0)])
    f = step_features_at((3.0, 0.0), (3.0, 0.0), [lane])
    np.testing.assert_array_equal(f.delta, [0.0, 0.0])
    np.testing.assert_allclose(f.offsets, [[0.0, 0.0]])


def test_rows_sorted_by_lane_id_and_offset_norm_is_distance():
    lanes = [LanePolyline.from_points(5, [(0.0, 4.0), (20.0, 4.0)]),
             LanePolyline.from_points(2, [(0.0, -1.0), (20.0, -1.0)])]
    f = step_features_at((3.0, 0.5), (2.0, 0.5), lanes, K=4)
    assert f.lane_ids == (2, 5)
    assert f.shapes.shape == (2, 8)
    np.testing.assert_allclose(np.hypot(f.offsets[:, 0], f.offsets[:, 1]), [1.5, 3.5])


def test_curved_lane_offsets_match_independent_projection():
    theta = np.linspace(0.0, math.pi / 2, 60)
    arc = np.column_stack([30.0 * np.sin(theta), 30.0 - 30.0 * np.cos(theta)])
    track = arc[::4][:6] + np.array([0.0, 0.3])
    sample = make_sample(track[:4], track[4:], [arc], kind="curve")
    origin, history, lanes = normalize_sample(sample)
    feats = build_features(sample, K=3, spacing=2.0)
    for t, f in enumerate(feats, start=1):
        p = project(lanes[0], history[t])
        np.testing.assert_allclose(f.offsets[0], p.point - history[t], atol=1e-12)
        ahead = resample_ahead(lanes[0], p.arc_len, 3, 2.0)
        np.testing.assert_allclose(f.shapes[0], (ahead - history[t]).reshape(-1), atol=1e-12)


def test_normalize_sample_puts_last_observation_at_origin():
    sample = straight_sample().translated(137.2, -59.1)
    origin, history, lanes = normalize_sample(sample)
    np.testing.assert_allclose(origin, [137.2 + 2.0, -59.1])
    np.testing.assert_allclose(history[-1], [0.0, 0.0])
    assert [lane.id for lane in lanes] == sorted(lane.id for lane in sample.lanes)


def test_jacobian_matches_finite_difference():
    theta = np.linspace(0.0, math.pi / 3, 40)
    lane = LanePolyline.from_points(0, np.column_stack([20.0 * np.sin(theta), 20.0 - 20.0 * np.cos(theta)]))
    pos = np.array([5.0, 1.2])
    f = step_features_at(pos, pos - 1.0, [lane], K=3, spacing=1.5, with_jacobian=True)
    h = 1e-6
    for axis in range(2):
        d = np.zeros(2)
        d[axis] = h
        up = step_features_at(pos + d, pos - 1.0, [lane], K=3, spacing=1.5)
        down = step_features_at(pos - d, pos - 1.0, [lane], K=3, spacing=1.5)
        np.testing.assert_allclose((up.offsets - down.offsets)[0] / (2 * h), f.offsets_jac[0][:, axis], atol=1e-5)
        np.testing.assert_allclose((up.shapes - down.shapes)[0] / (2 * h), f.shapes_jac[0][:, axis], atol=1e-5)


def test_validate_rejects_bad_samples():
    good = straight_sample()
    assert good.validate(2) is good
    with pytest.raises(DomainError):
        good.validate(30)
    bad_times = good.obs.copy()
    bad_times[0, 0] -= 0.05
    with pytest.raises(DomainError):
        TrackSample("x", "straight", bad_times, good.future, good.lanes).validate()
    dup = [LanePolyline.from_points(1, [(0.0, 0.0), (1.0, 0.0)]), LanePolyline.from_points(1, [(0.0, 1.0), (1.0, 1.0)])]
    with pytest.raises(DomainError):
        make_sample(good.positions, good.future, dup).validate()


def test_build_features_needs_two_observations():
    with pytest.raises(DomainError):
        build_features(make_sample([(0.0, 0.0)], [(1.0, 0.0)], [[(0.0, 0.0), (5.0, 0.0)]]))


def test_build_features_are_translation_invariant():
    rng = np.random.default_rng(5)
    for seed in range(30):
        kind = ("straight", "curve", "merge", "bifurcation_left", "bifurcation_right", "lane_change")[seed % 6]
        sample = generate(ScenarioSpec(kind, seed=seed))
        dx, dy = rng.uniform(-500.0, 500.0, size=2)
        for a, b in zip(build_features(sample), build_features(sample.translated(dx, dy))):
            assert a.lane_ids == b.lane_ids
            np.testing.assert_allclose(b.delta, a.delta, rtol=0, atol=1e-9)
            np.testing.assert_allclose(b.offsets, a.offsets, rtol=0, atol=1e-9)
            np.testing.assert_allclose(b.shapes, a.shapes, rtol=0, atol=1e-9)
