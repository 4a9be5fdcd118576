"""Training samples from a subsampled grid: six normalized features and an angle label."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._binio import FormatError, check_magic, read_struct, write_struct
from .grid import GridBundle

__all__ = [
    "DatasetSample",
    "Dataset",
    "FEATURE_NAMES",
    "features_for_point",
    "features_for_points",
    "label_for_angle",
    "build_dataset",
    "shuffle",
    "save_dataset",
    "load_dataset",
    "export_dataset_csv",
]

DATASET_MAGIC = b"TDST"
DATASET_VERSION = 1
FEATURE_NAMES = ("x_norm", "y_norm", "range_norm", "dir_x", "dir_y", "polar_angle")


class DatasetSample(NamedTuple):
    features: np.ndarray
    label: float
    angle_index: int


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray = field(repr=False)  # (M, 6)
    labels: np.ndarray = field(repr=False)  # (M,)
    angle_index: np.ndarray = field(repr=False)  # (M,) int
    r_max: float
    density: int
    grid_digest: str = ""

    def __post_init__(self):
        m = len(self.labels)
        if self.features.shape != (m, 6) or self.angle_index.shape != (m,):
            raise ValueError("features, labels and angle_index must have matching lengths")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> DatasetSample:
        return DatasetSample(self.features[i], float(self.labels[i]), int(self.angle_index[i]))

    def take(self, order: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[order],
            self.labels[order],
            self.angle_index[order],
            self.r_max,
            self.density,
            self.grid_digest,
        )


def features_for_points(points: np.ndarray, r_max: float) -> np.ndarray:
    """Vectorized :func:`features_for_point` over an (M, 2) array."""
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = p[:, 0], p[:, 1]
    norm = np.hypot(x, y)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise ValueError("feature points must be finite and away from the origin")
    # Grazing shots at angle 0 or pi sag a fraction of a meter below y = 0; their
    # polar angle is clamped onto the half-plane boundary to stay in [0, pi].
    polar = np.arctan2(np.maximum(y, 0.0), x)
    return np.column_stack([x / r_max, y / r_max, norm / r_max, x / norm, y / norm, polar / np.pi])


def features_for_point(p, r_max: float) -> np.ndarray:
    return features_for_points(np.asarray(p, dtype=np.float64)[None, :], r_max)[0]


def label_for_angle(theta: float) -> float:
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"angle {theta} outside [0, pi]")
    return theta / math.pi


def build_dataset(grid: GridBundle, r_max: float | None = None) -> Dataset:
    """One sample per retained point, origin excluded, ordered by angle then point."""
    if not grid.subsampled:
        raise ValueError("build_dataset expects a subsampled grid")
    if not grid.trajectories:
        raise ValueError("empty grid")
    r_max = grid.sim_config.max_radius if r_max is None else float(r_max)
    feats, labels, owners = [], [], []
    for t in grid.trajectories:
        pts = t.points[1:]
        if len(pts) == 0:
            continue
        feats.append(features_for_points(pts, r_max))
        labels.append(np.full(len(pts), label_for_angle(t.initial_angle)))
        owners.append(np.full(len(pts), t.angle_index, dtype=np.int64))
    if not feats:
        raise ValueError("grid has no points beyond the origin")
    return Dataset(
        np.concatenate(feats),
        np.concatenate(labels),
        np.concatenate(owners),
        r_max,
        grid.density,
        grid.digest(),
    )


def shuffle(ds: Dataset, seed: int) -> Dataset:
    return ds.take(np.random.default_rng(seed).permutation(len(ds)))


def save_dataset(ds: Dataset, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        write_struct(fh, "IIdQ", DATASET_VERSION, ds.density, ds.r_max, len(ds))
        rec = np.zeros(len(ds), dtype=[("f", "<f4", (7,)), ("idx", "<u4")])
        rec["f"][:, :6] = ds.features
        rec["f"][:, 6] = ds.labels
        rec["idx"] = ds.angle_index
        fh.write(rec.tobytes())


def load_dataset(path: str | Path) -> Dataset:
    with open(path, "rb") as fh:
        check_magic(fh, DATASET_MAGIC, DATASET_VERSION)
        density, r_max, count = read_struct(fh, "IdQ")
        raw = fh.read()
    rec_dtype = np.dtype([("f", "<f4", (7,)), ("idx", "<u4")])
    if len(raw) != rec_dtype.itemsize * count:
        raise FormatError(f"dataset payload has {len(raw)} bytes, expected {rec_dtype.itemsize * count}")
    rec = np.frombuffer(raw, dtype=rec_dtype)
    f = rec["f"].astype(np.float64)
    return Dataset(f[:, :6].copy(), f[:, 6].copy(), rec["idx"].astype(np.int64), r_max, density)


def export_dataset_csv(ds: Dataset, path: str | Path) -> None:
    """CSV mirror of the binary columns, at the binary format's float32 precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*FEATURE_NAMES, "label", "angle_index"])
        f32 = np.column_stack([ds.features, ds.labels]).astype(np.float32)
        for row, idx in zip(f32, ds.angle_index):
            w.writerow([*(repr(float(v)) for v in row), int(idx)])
