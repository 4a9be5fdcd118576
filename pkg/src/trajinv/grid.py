"""Baking the angular trajectory grid, last-point spacing statistics and subsampling."""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._binio import FormatError, check_magic, read_array, read_struct, write_array, write_struct
from .dynamics import (
    Environment,
    ProjectileParams,
    SimConfig,
    Termination,
    Trajectory,
    get_profile,
    simulate,
)

__all__ = [
    "GridBundle",
    "grid_angles",
    "bake_grid",
    "last_point_spacing_stats",
    "subsample_trajectory",
    "subsample_grid",
    "save_grid",
    "load_grid",
    "export_grid_csv",
]

GRID_MAGIC = b"TGRD"
GRID_VERSION = 1


@dataclass(frozen=True, eq=False)
class GridBundle:
    sim_config: SimConfig
    projectile: ProjectileParams
    environment: Environment
    trajectories: tuple[Trajectory, ...] = field(repr=False)
    spacing_mean: float
    spacing_variance: float
    subsampled: bool = False

    @property
    def density(self) -> int:
        return len(self.trajectories)

    @property
    def profile(self) -> tuple[ProjectileParams, Environment]:
        return self.projectile, self.environment

    @property
    def unsatisfiable(self) -> tuple[int, ...]:
        """Angle indices whose trajectory could not meet the subsampling bound."""
        return tuple(t.angle_index for t in self.trajectories if not t.bound_ok)

    def point_counts(self) -> np.ndarray:
        return np.array([len(t) for t in self.trajectories], dtype=np.int64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.trajectories:
            h.update(np.float64(t.initial_angle).tobytes())
            h.update(t.points.tobytes())
        return h.hexdigest()


def grid_angles(density: int) -> np.ndarray:
    """``density`` uniformly spaced elevation angles over [0, pi], both ends included."""
    if density < 2:
        raise ValueError("angular density must be >= 2")
    k = np.arange(density, dtype=np.float64)
    return np.pi * k / (density - 1)


def grid_angle(index: int, density: int) -> float:
    return math.pi * index / (density - 1)


def bake_grid(
    cfg: SimConfig,
    profile: tuple[ProjectileParams, Environment] | None = None,
    threads: int = 1,
) -> GridBundle:
    """Simulate one trajectory per grid angle and compute the spacing statistics.

    Trajectories are assembled in angle order regardless of ``threads``.
    """
    proj, env = profile if profile is not None else get_profile(cfg.profile_name)
    angles = grid_angles(cfg.angular_density)

    def run(k: int) -> Trajectory:
        return simulate(float(angles[k]), cfg, env, proj, angle_index=k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajectories = tuple(pool.map(run, range(len(angles))))
    else:
        trajectories = tuple(run(k) for k in range(len(angles)))

    short = [t.angle_index for t in trajectories if len(t) < 2]
    if short:
        raise ValueError(f"trajectories with fewer than 2 points at angle indices {short}")
    mean, var = _spacing(trajectories)
    return GridBundle(cfg, proj, env, trajectories, mean, var, subsampled=False)


def _spacing(trajectories) -> tuple[float, float]:
    if len(trajectories) < 2:
        raise ValueError("spacing statistics need at least 2 trajectories")
    last = np.array([t.points[-1] for t in trajectories])
    d = np.hypot(*(last[1:] - last[:-1]).T)
    return float(d.mean()), float(d.var())


def last_point_spacing_stats(grid: GridBundle | list[Trajectory]) -> tuple[float, float]:
    """Population mean and variance of distances between angle-adjacent final points."""
    trajectories = grid.trajectories if isinstance(grid, GridBundle) else grid
    return _spacing(trajectories)


def _max_gap(points: np.ndarray, idx: np.ndarray) -> float:
    seg = np.diff(points[idx], axis=0)
    return float(np.hypot(seg[:, 0], seg[:, 1]).max()) if len(seg) else 0.0


def _stride_indices(n: int, k: int) -> np.ndarray:
    idx = np.arange(0, n, k)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def subsample_trajectory(traj: Trajectory, max_spacing: float) -> Trajectory:
    """Keep every k-th point for the largest k whose retained gaps are all <= max_spacing.

    The first and final points are always kept. If a single raw step is already
    longer than ``max_spacing`` the trajectory is returned unchanged with
    ``bound_ok=False``.
    """
    if not max_spacing > 0:
        raise ValueError("max_spacing must be positive")
    pts = traj.points
    n = len(pts)
    if n <= 2:
        return traj
    base = traj.stride
    if _max_gap(pts, np.arange(n)) > max_spacing:
        return replace(traj, bound_ok=False)

    # The first retained gap is |p_k - p_0|, so only strides where that gap
    # already fits can be valid; scan those from the largest down.
    reach = np.hypot(*(pts[1:] - pts[0]).T)
    candidates = np.nonzero(reach <= max_spacing)[0] + 1
    for k in candidates[::-1]:
        k = int(k)
        idx = _stride_indices(n, k)
        if _max_gap(pts, idx) <= max_spacing:
            if k == 1:
                return traj
            return replace(traj, points=pts[idx], stride=base * k, bound_ok=True)
    return traj  # unreachable: stride 1 is always valid here


def subsample_grid(grid: GridBundle) -> GridBundle:
    """Subsample every trajectory with the grid's last-point spacing mean as the bound."""
    if grid.subsampled:
        raise ValueError("grid is already subsampled")
    trajectories = tuple(subsample_trajectory(t, grid.spacing_mean) for t in grid.trajectories)
    return replace(grid, trajectories=trajectories, subsampled=True)


def save_grid(grid: GridBundle, path: str | Path) -> None:
    p, e, c = grid.projectile, grid.environment, grid.sim_config
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        write_struct(fh, "II", GRID_VERSION, grid.density)
        write_struct(
            fh,
            "6d",
            p.mass,
            p.drag_coeff,
            p.ref_area,
            p.muzzle_speed,
            e.gravity,
            e.air_density,
        )
        write_struct(fh, "ddB", c.dt, c.max_radius, int(grid.subsampled))
        for t in grid.trajectories:
            write_struct(fh, "dBQ", t.initial_angle, int(t.termination), len(t))
            write_array(fh, t.points.reshape(-1), "f8")


def load_grid(path: str | Path, cfg_overrides: dict | None = None) -> GridBundle:
    """Read a TGRD file. Spacing statistics are recomputed from the final points."""
    with open(path, "rb") as fh:
        check_magic(fh, GRID_MAGIC, GRID_VERSION)
        (density,) = read_struct(fh, "I")
        mass, cd, area, speed, g, rho = read_struct(fh, "6d")
        dt, max_radius, subsampled = read_struct(fh, "ddB")
        trajectories = []
        for k in range(density):
            angle, cause, count = read_struct(fh, "dBQ")
            pts = read_array(fh, "f8", 2 * count).reshape(count, 2)
            try:
                term = Termination(cause)
            except ValueError:
                raise FormatError(f"bad termination code {cause}") from None
            trajectories.append(Trajectory(angle, k, pts, term))
        if fh.read(1):
            raise FormatError("trailing bytes after last trajectory")
    cfg = SimConfig(angular_density=density, max_radius=max_radius, dt=dt, **(cfg_overrides or {}))
    mean, var = _spacing(trajectories)
    return GridBundle(
        cfg,
        ProjectileParams(mass, cd, area, speed),
        Environment(g, rho),
        tuple(trajectories),
        mean,
        var,
        subsampled=bool(subsampled),
    )



def export_grid_csv(grid: GridBundle, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_index", "point_index", "x", "y"])
        for t in grid.trajectories:
            for i, (x, y) in enumerate(t.points):
                w.writerow([t.angle_index, i, repr(float(x)), repr(float(y))])
