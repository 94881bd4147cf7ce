"""laneattn.graph

Unfolds a track and its lane set into per-step spatio-temporal graph features:
the vehicle's displacement and, for every lane node, the vehicle-lane offset
and the lane's look-ahead shape relative to the vehicle.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from laneattn.errors import DomainError
from laneattn.geometry import LanePolyline, project, resample_ahead_with_tangents, translate

DT = 0.1
DEFAULT_SHAPE_K = 10
DEFAULT_SHAPE_SPACING = 2.0


@dataclass
class TrackSample:
    """One instance: observed history, ground-truth future and lane set."""
    sample_id: str
    kind: str
    obs: np.ndarray  # (T, 3) rows of (t, x, y)
    future: np.ndarray  # (T_pred, 2)
    lanes: List[LanePolyline] = field(default_factory=list)
    dt: float = DT

    @property
    def positions(self) -> np.ndarray:
        return self.obs[:, 1:3]

    @property
    def horizon_steps(self) -> int:
        return len(self.future)

    def validate(self, horizon_steps: Optional[int] = None) -> "TrackSample":
        if self.obs.ndim != 2 or self.obs.shape[1] != 3 or not 1 <= len(self.obs) <= 20:
            raise DomainError(f"sample {self.sample_id}: obs must hold 1-20 rows of (t, x, y)")
        if self.future.ndim != 2 or self.future.shape[1] != 2 or len(self.future) == 0:
            raise DomainError(f"sample {self.sample_id}: future must be an (n, 2) array")
        if horizon_steps is not None and len(self.future) != horizon_steps:
            raise DomainError(f"sample {self.sample_id}: future has {len(self.future)} steps, expected {horizon_steps}")
        gaps = np.diff(self.obs[:, 0])
        if np.any(np.abs(gaps - self.dt) > 1e-9):
            raise DomainError(f"sample {self.sample_id}: timestamps must be spaced by {self.dt}")
        ids = [lane.id for lane in self.lanes]
        if len(set(ids)) != len(ids):
            raise DomainError(f"sample {self.sample_id}: duplicate lane ids {ids}")
        if not (np.all(np.isfinite(self.obs)) and np.all(np.isfinite(self.future))):
            raise DomainError(f"sample {self.sample_id}: non-finite coordinates")
        return self

    def translated(self, dx: float, dy: float) -> "TrackSample":
        obs = self.obs.copy()
        obs[:, 1] += dx
        obs[:, 2] += dy
        return TrackSample(self.sample_id, self.kind, obs, self.future + np.array([dx, dy]),
                           [translate(lane, dx, dy) for lane in self.lanes], self.dt)

    def __eq__(self, other):
        if not isinstance(other, TrackSample):
            return NotImplemented
        return (self.sample_id == other.sample_id and self.kind == other.kind and self.dt == other.dt
                and np.array_equal(self.obs, other.obs) and np.array_equal(self.future, other.future)
                and self.lanes == other.lanes)


@dataclass
class StepFeatures:
    """Inputs of one ST-graph step; per-lane rows are sorted by lane id."""
    delta: np.ndarray  # (2,)
    lane_ids: Tuple[int, ...]
    offsets: np.ndarray  # (N, 2) projection point minus vehicle
    shapes: np.ndarray  # (N, 2K) look-ahead points minus vehicle
    # d(offsets)/d(pos) and d(shapes)/d(pos), filled on request
    offsets_jac: Optional[np.ndarray] = None  # (N, 2, 2)
    shapes_jac: Optional[np.ndarray] = None  # (N, 2K, 2)


def sorted_lanes(lanes: Sequence[LanePolyline]) -> List[LanePolyline]:
    return sorted(lanes, key=lambda lane: lane.id)


def normalize_sample(sample: TrackSample):
    """Translate so the last observed position is the origin.

    Returns (origin, history positions (T, 2), id-sorted translated lanes).
    """
    origin = sample.positions[-1].copy()
    history = sample.positions - origin
    lanes = [translate(lane, -origin[0], -origin[1]) for lane in sorted_lanes(sample.lanes)]
    return origin, history, lanes


def step_features_at(pos, prev, lanes: Sequence[LanePolyline], K: int = DEFAULT_SHAPE_K,
                     spacing: float = DEFAULT_SHAPE_SPACING, with_jacobian: bool = False) -> StepFeatures:
    """Features of the vehicle at `pos` having come from `prev`."""
    if not lanes:
        raise DomainError("step features need at least one lane")
    pos = np.asarray(pos, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    ordered = sorted_lanes(lanes)
    n = len(ordered)
    offsets = np.empty((n, 2))
    shapes = np.empty((n, 2 * K))
    off_jac = np.empty((n, 2, 2)) if with_jacobian else None
    shape_jac = np.empty((n, 2 * K, 2)) if with_jacobian else None
    eye = np.eye(2)
    for i, lane in enumerate(ordered):
        proj = project(lane, pos)
        ahead, tangents = resample_ahead_with_tangents(lane, proj.arc_len, K, spacing)
        offsets[i] = proj.point - pos
        shapes[i] = (ahead - pos).reshape(-1)
        if with_jacobian:
            if proj.interior:
                u = lane.tangent(proj.segment_index)
                d_foot = np.outer(u, u)
                d_arc = u
            else:
                d_foot = np.zeros((2, 2))
                d_arc = np.zeros(2)
            off_jac[i] = d_foot - eye
            # each look-ahead point slides along its own tangent as the arc moves
            per_point = tangents[:, :, None] * d_arc[None, None, :] - eye[None, :, :]
            shape_jac[i] = per_point.reshape(2 * K, 2)
    return StepFeatures(delta=pos - prev, lane_ids=tuple(lane.id for lane in ordered),
                        offsets=offsets, shapes=shapes, offsets_jac=off_jac, shapes_jac=shape_jac)


def build_features(sample: TrackSample, K: int = DEFAULT_SHAPE_K,
                   spacing: float = DEFAULT_SHAPE_SPACING) -> List[StepFeatures]:
    """One StepFeatures per observed step after the first, in the normalized frame."""
    if len(sample.obs) < 2:
        raise DomainError(f"sample {sample.sample_id}: need at least 2 observed steps for a delta")
    _, history, lanes = normalize_sample(sample)
    return [step_features_at(history[t], history[t - 1], lanes, K, spacing)
            for t in range(1, len(history))]
