"""Shared fixtures: a tiny model config and sample builders."""
import numpy as np
import pytest

from laneattn.geometry import LanePolyline
from laneattn.graph import DT, TrackSample
from laneattn.model import ModelConfig


def make_sample(positions, future, lanes, sample_id="s0", kind="straight", dt=DT):
    """TrackSample from (T, 2) observed positions; timestamps end at 0."""
    positions = np.asarray(positions, dtype=np.float64)
    times = (np.arange(len(positions)) - (len(positions) - 1)) * dt
    obs = np.column_stack([times, positions])
    lanes = [lane if isinstance(lane, LanePolyline) else LanePolyline.from_points(i, lane)
             for i, lane in enumerate(lanes)]
    return TrackSample(sample_id, kind, obs, np.asarray(future, dtype=np.float64), lanes, dt)


def straight_sample(n_obs=3, n_pred=2, step=1.0, lanes_y=(0.0, 4.0), sample_id="straight"):
    """Vehicle moving `step` per tick along y=0 with parallel straight lanes."""
    xs = step * np.arange(n_obs + n_pred, dtype=np.float64)
    track = np.column_stack([xs, np.zeros_like(xs)])
    lanes = [[(-20.0, y), (80.0, y)] for y in lanes_y]
    return make_sample(track[:n_obs], track[n_obs:], lanes, sample_id=sample_id)


@pytest.fixture
def tiny_config():
    return ModelConfig(embed_dim=4, lstm_hidden=8, lane_enc_dim=8, agg_dim=24, overall_hidden=8,
                       lane_shape_K=3, lane_shape_spacing=2.0, T_pred_steps=2, mlp_min_hidden=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sample_factory():
    return make_sample
