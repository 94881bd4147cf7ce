"""laneattn.geometry

Lane center-lines and the projection / look-ahead queries that turn a
vehicle position into lane features.
"""
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from laneattn.errors import DomainError

MIN_SEGMENT = 1e-9


@dataclass(frozen=True)
class LanePolyline:
    """Ordered center-line points (meters) with cumulative arc length."""
    id: int
    points: np.ndarray = field(repr=False)
    cum_len: np.ndarray = field(repr=False)

    @classmethod
    def from_points(cls, lane_id: int, points) -> "LanePolyline":
        pts = np.array(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DomainError(f"lane {lane_id}: points must be an (n, 2) array, got {pts.shape}")
        if len(pts) < 2:
            raise DomainError(f"lane {lane_id}: needs at least 2 points")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(seg <= MIN_SEGMENT):
            raise DomainError(f"lane {lane_id}: consecutive points must be distinct")
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        pts.setflags(write=False)
        cum.setflags(write=False)
        return cls(int(lane_id), pts, cum)

    @property
    def length(self) -> float:
        return float(self.cum_len[-1])

    @property
    def segment_count(self) -> int:
        return len(self.points) - 1

    def tangent(self, segment_index: int) -> np.ndarray:
        d = self.points[segment_index + 1] - self.points[segment_index]
        return d / np.hypot(d[0], d[1])

    def __eq__(self, other):
        if not isinstance(other, LanePolyline):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.id, self.points.tobytes()))


@dataclass(frozen=True)
class Projection:
    point: np.ndarray
    arc_len: float
    dist: float
    segment_index: int
    # foot point strictly inside its segment (not clamped to an end)
    interior: bool


def translate(lane: LanePolyline, dx: float, dy: float) -> LanePolyline:
    return LanePolyline.from_points(lane.id, lane.points + np.array([dx, dy]))


def project(lane: LanePolyline, q) -> Projection:
    """Closest point of the polyline to `q`; the first segment wins ties."""
    q = np.asarray(q, dtype=np.float64)
    a = lane.points[:-1]
    d = lane.points[1:] - a
    seg_sq = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", q - a, d) / seg_sq, 0.0, 1.0)
    feet = a + t[:, None] * d
    dist_sq = np.einsum("ij,ij->i", feet - q, feet - q)
    k = int(np.argmin(dist_sq))
    point = feet[k]
    arc = float(lane.cum_len[k] + t[k] * np.sqrt(seg_sq[k]))
    arc = min(max(arc, 0.0), lane.length)
    return Projection(point=point, arc_len=arc, dist=float(np.sqrt(dist_sq[k])),
                      segment_index=k, interior=bool(0.0 < t[k] < 1.0))


def _segments_for(lane: LanePolyline, arcs: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(lane.cum_len, arcs, side="right") - 1
    return np.clip(idx, 0, lane.segment_count - 1)


def resample_ahead_with_tangents(lane: LanePolyline, from_arc: float, K: int,
                                 spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    """K points at from_arc + spacing*(1..K) and the unit tangent at each.

    Arc lengths past the lane end continue straight along the final segment.
    """
    if K < 1:
        raise DomainError("resample count K must be at least 1")
    if spacing <= 0:
        raise DomainError("resample spacing must be positive")
    arcs = from_arc + spacing * np.arange(1, K + 1, dtype=np.float64)
    xs = np.interp(arcs, lane.cum_len, lane.points[:, 0])
    ys = np.interp(arcs, lane.cum_len, lane.points[:, 1])
    pts = np.stack([xs, ys], axis=1)
    seg = _segments_for(lane, arcs)
    d = lane.points[seg + 1] - lane.points[seg]
    tangents = d / np.hypot(d[:, 0], d[:, 1])[:, None]
    beyond = arcs > lane.length
    if np.any(beyond):
        last_dir = lane.tangent(lane.segment_count - 1)
        pts[beyond] = lane.points[-1] + (arcs[beyond] - lane.length)[:, None] * last_dir
    return pts, tangents


def resample_ahead(lane: LanePolyline, from_arc: float, K: int, spacing: float) -> np.ndarray:
    return resample_ahead_with_tangents(lane, from_arc, K, spacing)[0]


def nearest_lane(q, lanes: Sequence[LanePolyline]) -> int:
    """Index of the lane with the smallest projection distance (lowest index on ties)."""
    if not lanes:
        raise DomainError("nearest_lane needs at least one lane")
    dist_sq = [project(lane, q).dist ** 2 for lane in lanes]
    return int(np.argmin(dist_sq))
