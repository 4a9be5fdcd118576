"""Metrics for the inverse network: MSE, Percentage Angular Error against the
grid's pairwise angle step, quantization accuracy, and closed-loop miss
distances from re-simulating predicted launch angles."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dataset import Dataset, features_for_points
from .dynamics import Environment, ProjectileParams, SimConfig, simulate
from .grid import grid_angle
from .mlp import Network, forward

__all__ = [
    "DensityMismatchError",
    "ClosedLoopMiss",
    "MetricsReport",
    "pairwise_error",
    "percentage_angular_error",
    "quantize_to_grid",
    "polyline_distance",
    "predict_angles",
    "evaluate_model",
    "closed_loop_miss",
]


class DensityMismatchError(ValueError):
    pass


def pairwise_error(density: int) -> float:
    """Angular step e_d = pi / s of a uniform grid of s angles."""
    if density < 1:
        raise ValueError("density must be >= 1")
    return math.pi / density


def percentage_angular_error(y_true, y_pred, e_d: float):
    """|y_true - y_pred| / e_d; 1.0 means one full grid step (reported as 100%)."""
    if not e_d > 0:
        raise ValueError("e_d must be positive")
    return np.abs(np.asarray(y_true) - np.asarray(y_pred)) / e_d


def quantize_to_grid(y_pred, density: int):
    """Nearest baked grid angle (endpoint-inclusive spacing), ties to the lower index.

    Works on scalars and arrays; returns ``(index, angle)``.
    """
    y = np.asarray(y_pred, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("predictions must be finite")
    top = density - 1
    gap = math.pi / top
    lo = np.clip(np.floor(y / gap), 0, top).astype(np.int64)
    hi = np.minimum(lo + 1, top)
    a_lo = math.pi * lo / top
    a_hi = math.pi * hi / top
    # ulp-scale slack so an exact midpoint counts as a tie
    tol = 4 * np.finfo(np.float64).eps * math.pi
    idx = np.where(np.abs(y - a_hi) < np.abs(y - a_lo) - tol, hi, lo)
    idx = np.where(y <= 0, 0, np.where(y >= math.pi, top, idx))
    angle = math.pi * idx / top
    if idx.ndim == 0:
        return int(idx), float(angle)
    return idx, angle


class ClosedLoopMiss(NamedTuple):
    target: tuple[float, float]
    predicted_angle: float
    miss_distance: float
    error: str | None = None


@dataclass
class MetricsReport:
    mse: float
    pae_mean: float  # percent of one grid step
    pae_median: float
    pae_p95: float
    quantization_accuracy: float
    density: int
    e_d: float
    n_samples: int
    closed_loop: list[ClosedLoopMiss] = field(default_factory=list)
    seed: int | None = None  # seed that drew the closed-loop targets

    def closed_loop_fraction_within(self, bound: float) -> float:
        d = np.array([c.miss_distance for c in self.closed_loop])
        return float(np.mean(d <= bound)) if len(d) else float("nan")

    def rows(self) -> list[dict]:
        out = [
            {"metric": k, "value": v}
            for k, v in asdict(self).items()
            if k != "closed_loop" and not (k == "seed" and v is None)
        ]
        for c in self.closed_loop:
            out.append(
                {
                    "closed_loop_target": list(c.target),
                    "predicted_angle": c.predicted_angle,
                    "miss_distance": c.miss_distance,
                    "error": c.error,
                }
            )
        return out

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for row in self.rows():
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("kind,name,x,y,value\n")
            for k, v in asdict(self).items():
                if k != "closed_loop" and not (k == "seed" and v is None):
                    fh.write(f"metric,{k},,,{v!r}\n")
            for c in self.closed_loop:
                fh.write(f"closed_loop,{c.error or ''},{c.target[0]!r},{c.target[1]!r},{c.miss_distance!r}\n")

    def table(self) -> str:
        lines = [
            f"density s            {self.density}",
            f"pairwise error e_d   {self.e_d:.4e} rad",
            f"samples              {self.n_samples}",
            f"MSE (normalized)     {self.mse:.4e}",
            f"PAE mean             {self.pae_mean:.2f} %",
            f"PAE median           {self.pae_median:.2f} %",
            f"PAE p95              {self.pae_p95:.2f} %",
            f"quantization acc.    {self.quantization_accuracy:.4f}",
        ]
        if self.closed_loop:
            d = np.array([c.miss_distance for c in self.closed_loop])
            lines.append(
                f"closed-loop miss     median {np.nanmedian(d):.3f} m, p95 {np.nanpercentile(d, 95):.3f} m "
                f"over {len(d)} targets"
            )
        return "\n".join(lines)


def predict_angles(net: Network, features: np.ndarray, batch_size: int = 8192) -> np.ndarray:
    """Eval-mode predictions in radians (normalized output times pi)."""
    out = np.empty(len(features))
    for lo in range(0, len(features), batch_size):
        out[lo : lo + batch_size] = forward(net, features[lo : lo + batch_size], "eval")[:, 0]
    return out * math.pi


def evaluate_model(net: Network, dataset: Dataset, density: int | None = None) -> MetricsReport:
    density = dataset.density if density is None else density
    if dataset.density != density:
        raise DensityMismatchError(f"dataset has density {dataset.density}, report requested for {density}")
    if net.density is not None and net.density != density:
        raise DensityMismatchError(f"network was trained at density {net.density}, dataset has {density}")
    pred = predict_angles(net, dataset.features)
    true = dataset.labels * math.pi
    e_d = pairwise_error(density)
    pae = percentage_angular_error(true, pred, e_d) * 100.0
    idx, _ = quantize_to_grid(pred, density)
    return MetricsReport(
        mse=float(np.mean((pred / math.pi - dataset.labels) ** 2)),
        pae_mean=float(pae.mean()),
        pae_median=float(np.median(pae)),
        pae_p95=float(np.percentile(pae, 95)),
        quantization_accuracy=float(np.mean(idx == dataset.angle_index)),
        density=density,
        e_d=e_d,
        n_samples=len(dataset),
    )


def polyline_distance(points: np.ndarray, target) -> float:
    """Minimum distance from ``target`` to the polyline through ``points``."""
    t = np.asarray(target, dtype=np.float64)
    a = points[:-1]
    ab = points[1:] - a
    if len(ab) == 0:
        return float(np.hypot(*(points[0] - t)))
    denom = np.einsum("ij,ij->i", ab, ab)
    num = np.einsum("ij,ij->i", t - a, ab)
    u = np.clip(np.divide(num, denom, out=np.zeros_like(num), where=denom > 0), 0.0, 1.0)
    closest = a + u[:, None] * ab
    return float(np.min(np.hypot(closest[:, 0] - t[0], closest[:, 1] - t[1])))


def closed_loop_miss(
    net: Network | None,
    targets,
    grid_config: SimConfig,
    profile: tuple[ProjectileParams, Environment],
    quantize: bool = True,
    angles=None,
    r_max: float | None = None,
) -> list[ClosedLoopMiss]:
    """Predict a launch angle per target, re-simulate it, and measure the miss.

    ``angles`` (radians) bypasses the network, which is how oracle and
    perturbed-angle checks drive this routine. ``r_max`` must match the
    dataset the network was trained on (default: the grid radius).
    Simulation errors are recorded per target with a NaN miss.
    """
    proj, env = profile
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if angles is None:
        feats = features_for_points(targets, grid_config.max_radius if r_max is None else r_max)
        angles = predict_angles(net, feats)
    angles = np.asarray(angles, dtype=np.float64)
    out = []
    for target, angle in zip(targets, angles):
        if quantize:
            k, _ = quantize_to_grid(float(angle), grid_config.angular_density)
            # same expression bake_grid uses, so the baked trajectory is reproduced exactly
            angle = float(np.pi * np.float64(k) / (grid_config.angular_density - 1))
        else:
            angle = min(max(float(angle), 0.0), math.pi)
        try:
            traj = simulate(angle, grid_config, env, proj)
            miss, err = polyline_distance(traj.points, target), None
        except Exception as exc:  # surfaced per target, not raised
            miss, err = float("nan"), f"{type(exc).__name__}: {exc}"
        out.append(ClosedLoopMiss((float(target[0]), float(target[1])), angle, miss, err))
    return out
