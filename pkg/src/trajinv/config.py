"""Run configuration shared by the CLI subcommands.

Precedence: command-line flags > ``--config`` file > the defaults below.
The config file is flat ``key = value`` text using the field names of
:class:`RunConfig`; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dynamics import SimConfig, get_profile, load_profile_file, parse_key_values
from .mlp import MlpConfig, TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # simulation
    profile: str = "plausible-rifle"
    density: int = 500
    radius: float = 2000.0
    dt: float = 1e-4
    max_steps: int = 10_000_000
    integrator: str = "euler"
    # network
    layer_dims: str = "32,64,128,256"
    block_repeat: int = 2
    wide_layer_rule: bool = True
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.99
    precision: str = "float32"  # training arithmetic; saved models are always float64
    # training
    batch_size: int = 1024
    learning_rate: float = 1e-2
    momentum: float = 0.9
    plateau_min_delta: float = 1e-2
    min_delta_mode: str = "rel"
    plateau_patience: int = 20
    lr_reduce_factor: float = 0.1
    early_stop_patience: int = 40
    max_epochs: int = 500
    # evaluation / solving
    closed_loop_targets: int = 500
    threshold: float | None = None
    # shared
    seed: int = 0
    threads: int = 0  # 0 = all cores

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def profile_and_overrides(self):
        if Path(self.profile).is_file():
            proj, env, sim = load_profile_file(self.profile)
            return (proj, env), sim
        try:
            return get_profile(self.profile), {}
        except KeyError as exc:
            raise ConfigError(str(exc)) from None

    def sim_config(self, explicit: frozenset[str] = frozenset()) -> SimConfig:
        """``explicit`` names fields set on the command line; those beat any
        dt / max_radius / max_steps pinned by a profile file."""
        _, sim = self.profile_and_overrides()
        values = dict(
            angular_density=self.density,
            max_radius=self.radius,
            dt=self.dt,
            max_steps=self.max_steps,
            integrator=self.integrator,
        )
        for key, value in sim.items():
            if _SIM_FIELD[key] not in explicit:
                values[key] = value
        name = self.profile if not Path(self.profile).is_file() else "custom"
        try:
            return SimConfig(profile_name=name, **values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def mlp_config(self) -> MlpConfig:
        try:
            dims = tuple(int(d) for d in self.layer_dims.split(",") if d.strip())
            return MlpConfig(
                layer_dims=dims,
                block_repeat=self.block_repeat,
                append_8192_when_density_exceeds_4096=self.wide_layer_rule,
                bn_epsilon=self.bn_epsilon,
                bn_momentum=self.bn_momentum,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid network config: {exc}") from None

    def training_dtype(self):
        try:
            return {"float32": np.float32, "float64": np.float64}[self.precision]
        except KeyError:
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}") from None

    def training_config(self) -> TrainingConfig:
        threads = self.threads if self.threads > 0 else None
        try:
            return TrainingConfig(
                batch_size=self.batch_size,
                learning_rate=self.learning_rate,
                momentum=self.momentum,
                plateau_min_delta=self.plateau_min_delta,
                min_delta_mode=self.min_delta_mode,
                plateau_patience=self.plateau_patience,
                lr_reduce_factor=self.lr_reduce_factor,
                early_stop_patience=self.early_stop_patience,
                max_epochs=self.max_epochs,
                seed=self.seed,
                threads=threads,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid training config: {exc}") from None


_SIM_FIELD = {"dt": "dt", "max_radius": "radius", "max_steps": "max_steps"}
FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw):
    kind = FIELD_TYPES[name]
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind.startswith("float"):
            return None if raw.lower() == "none" else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def load_run_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            parsed = parse_key_values(text, tuple(FIELD_TYPES))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        values.update({k: _coerce(k, v) for k, v in parsed.items()})
    for key, value in overrides.items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = _coerce(key, value)
    return dataclasses.replace(RunConfig(), **values)
