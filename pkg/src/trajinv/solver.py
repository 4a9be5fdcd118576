"""Classical inverse solver: nearest baked trajectory point via a 2D k-d tree.

Every stored point carries a flat index in angle-major order, so comparing
``(squared distance, flat index)`` lexicographically gives the documented
tie-break (smallest angle index, then smallest point index) both in the tree
and in the linear-scan oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import map_3d_to_2d
from .grid import GridBundle

__all__ = [
    "SpatialIndex",
    "Nearest",
    "InitialConditions",
    "OutOfEnvelopeError",
    "build_index",
    "nearest_segment",
    "nearest_segment_bruteforce",
    "point_segment_distance",
    "solve_initial_conditions",
]


class Nearest(NamedTuple):
    angle_index: int
    point_index: int
    distance: float


def _flatten(grid: GridBundle):
    if not grid.trajectories:
        raise ValueError("empty grid")
    pts = np.concatenate([t.points for t in grid.trajectories])
    owner = np.concatenate([np.full(len(t), t.angle_index, dtype=np.int64) for t in grid.trajectories])
    local = np.concatenate([np.arange(len(t), dtype=np.int64) for t in grid.trajectories])
    return pts, owner, local


def _sq_dist(pts: np.ndarray, target) -> np.ndarray:
    dx = pts[:, 0] - target[0]
    dy = pts[:, 1] - target[1]
    return dx * dx + dy * dy


class SpatialIndex:
    """Static 2D k-d tree with per-node bounding boxes and bucketed leaves."""

    def __init__(self, points: np.ndarray, angle_index: np.ndarray, point_index: np.ndarray, leaf_size: int = 32):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.angle_index = angle_index
        self.point_index = point_index
        n = len(self.points)
        if n == 0:
            raise ValueError("cannot index an empty point set")
        self.leaf_size = leaf_size
        # perm[lo:hi] holds the flat indices owned by a node
        self.perm = np.arange(n, dtype=np.int64)
        self._lo: list[int] = []
        self._hi: list[int] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._bbox: list[tuple[float, float, float, float]] = []
        self._build(0, n)
        self.envelope = float(np.sqrt(_sq_dist(self.points, (0.0, 0.0)).max()))

    def __len__(self) -> int:
        return len(self.points)

    def _build(self, lo: int, hi: int) -> int:
        node = len(self._lo)
        idx = self.perm[lo:hi]
        sub = self.points[idx]
        mins, maxs = sub.min(axis=0), sub.max(axis=0)
        self._lo.append(lo)
        self._hi.append(hi)
        self._left.append(-1)
        self._right.append(-1)
        self._bbox.append((mins[0], mins[1], maxs[0], maxs[1]))
        if hi - lo <= self.leaf_size:
            return node
        axis = int(np.argmax(maxs - mins))
        # stable sort keeps the build deterministic for repeated coordinates
        order = np.argsort(sub[:, axis], kind="stable")
        self.perm[lo:hi] = idx[order]
        mid = (lo + hi) // 2
        self._left[node] = self._build(lo, mid)
        self._right[node] = self._build(mid, hi)
        return node

    def _box_sq_dist(self, node: int, tx: float, ty: float) -> float:
        x0, y0, x1, y1 = self._bbox[node]
        dx = max(x0 - tx, 0.0, tx - x1)
        dy = max(y0 - ty, 0.0, ty - y1)
        return dx * dx + dy * dy

    def query(self, target) -> tuple[int, float]:
        """Flat index and squared distance of the nearest stored point."""
        tx, ty = float(target[0]), float(target[1])
        if not (math.isfinite(tx) and math.isfinite(ty)):
            raise ValueError("target must be finite")
        best_d2 = math.inf
        best = -1
        stack = [0]
        while stack:
            node = stack.pop()
            # equal bounds must still be visited so ties resolve correctly
            if self._box_sq_dist(node, tx, ty) > best_d2:
                continue
            left = self._left[node]
            if left < 0:
                idx = self.perm[self._lo[node] : self._hi[node]]
                d2 = _sq_dist(self.points[idx], (tx, ty))
                m = d2.min()
                if m <= best_d2:
                    cand = int(idx[d2 == m].min())
                    if m < best_d2 or cand < best:
                        best_d2, best = float(m), cand
                continue
            right = self._right[node]
            dl = self._box_sq_dist(left, tx, ty)
            dr = self._box_sq_dist(right, tx, ty)
            # push the farther child first so the nearer one is searched first
            if dl <= dr:
                stack.extend((right, left))
            else:
                stack.extend((left, right))
        return best, best_d2


def build_index(grid: GridBundle, leaf_size: int = 32) -> SpatialIndex:
    pts, owner, local = _flatten(grid)
    return SpatialIndex(pts, owner, local, leaf_size=leaf_size)


def nearest_segment(index: SpatialIndex, target) -> Nearest:
    flat, d2 = index.query(target)
    return Nearest(int(index.angle_index[flat]), int(index.point_index[flat]), math.sqrt(d2))


def nearest_segment_bruteforce(grid: GridBundle, target) -> Nearest:
    """Linear-scan oracle with the same tie-break as :func:`nearest_segment`."""
    pts, owner, local = _flatten(grid)
    d2 = _sq_dist(pts, (float(target[0]), float(target[1])))
    flat = int(np.argmin(d2))  # first minimum == lowest (angle, point)
    return Nearest(int(owner[flat]), int(local[flat]), math.sqrt(float(d2[flat])))


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.hypot(*(a + t * ab - p)))


@dataclass(frozen=True)
class InitialConditions:
    elevation_angle: float  # rad
    azimuth: float  # rad
    speed: float  # m/s
    miss_distance: float  # m, to the nearest incident polyline segment
    point_distance: float  # m, to the nearest stored point
    angle_index: int
    point_index: int
    threshold: float
    in_envelope: bool = True

    @property
    def hit(self) -> bool:
        return self.in_envelope and self.miss_distance <= self.threshold


class OutOfEnvelopeError(ValueError):
    """The target lies outside the disk covered by the baked grid."""

    def __init__(self, message: str, result: InitialConditions):
        super().__init__(message)
        self.result = result


def solve_initial_conditions(
    index: SpatialIndex,
    grid: GridBundle,
    target3,
    threshold: float | None = None,
) -> InitialConditions:
    """Launch angle, azimuth and speed whose baked trajectory passes closest to ``target3``.

    Raises :class:`OutOfEnvelopeError` (carrying the best-effort result) when the
    target's in-plane range exceeds the farthest baked point.
    """
    (r, z), azimuth = map_3d_to_2d(target3)
    target = (r, z)
    near = nearest_segment(index, target)
    traj = grid.trajectories[near.angle_index]
    pts = traj.points
    i = near.point_index
    miss = near.distance
    for j in (i - 1, i + 1):
        if 0 <= j < len(pts):
            miss = min(miss, point_segment_distance(target, pts[min(i, j)], pts[max(i, j)]))
    envelope = index.envelope
    result = InitialConditions(
        elevation_angle=traj.initial_angle,
        azimuth=azimuth,
        speed=grid.projectile.muzzle_speed,
        miss_distance=miss,
        point_distance=near.distance,
        angle_index=near.angle_index,
        point_index=near.point_index,
        threshold=grid.spacing_mean if threshold is None else float(threshold),
        in_envelope=math.hypot(r, z) <= envelope,
    )
    if not result.in_envelope:
        raise OutOfEnvelopeError(
            f"target range {math.hypot(r, z):.3f} m exceeds the baked envelope {envelope:.3f} m", result
        )
    return result
