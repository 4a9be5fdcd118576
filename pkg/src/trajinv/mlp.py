"""A small numpy MLP: swish blocks with pre-norm batch normalization, MSE loss,
heavy-ball SGD, plateau learning-rate reduction and early stopping.

Layer layout for ``layer_dims = [d0, d1, ..., dk]`` and ``block_repeat = r``::

    Linear(input -> d0), swish
    r x [BatchNorm, Linear(-> d1), swish]
    ...
    r x [BatchNorm, Linear(-> dk), swish]
    Linear(dk -> output)

The first layer and the output layer carry no normalization.
"""

from __future__ import annotations

import csv
import math
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ._binio import FormatError, check_magic, read_array, read_struct, write_array, write_struct

__all__ = [
    "FULL_LAYER_DIMS",
    "MlpConfig",
    "TrainingConfig",
    "Layer",
    "Network",
    "History",
    "TrainingDivergedError",
    "swish",
    "init_network",
    "forward",
    "loss_mse",
    "backward",
    "sgd_momentum_update",
    "train",
    "gradient_check",
    "save_network",
    "load_network",
]

FULL_LAYER_DIMS = (32, 64, 128, 256, 512, 864, 1024, 2048, 4096)
WIDE_LAYER = 8192


@dataclass(frozen=True)
class MlpConfig:
    layer_dims: tuple[int, ...] = (32, 64, 128, 256)
    block_repeat: int = 2
    append_8192_when_density_exceeds_4096: bool = True
    input_dim: int = 6
    output_dim: int = 1
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if any(d < 1 for d in self.layer_dims) or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("all layer dimensions must be >= 1")
        if self.block_repeat < 1:
            raise ValueError("block_repeat must be >= 1")
        if not self.bn_epsilon > 0 or not 0 < self.bn_momentum < 1:
            raise ValueError("bn_epsilon must be > 0 and bn_momentum in (0, 1)")

    def dims_for(self, density: int | None) -> tuple[int, ...]:
        dims = self.layer_dims
        if self.append_8192_when_density_exceeds_4096 and density is not None and density > 4096:
            dims = dims + (WIDE_LAYER,)
        return dims

    def layer_plan(self, density: int | None = None) -> list[tuple[int, int, bool, bool]]:
        """(fan_in, fan_out, has_norm, has_activation) for every linear layer."""
        dims = self.dims_for(density)
        plan = []
        prev = self.input_dim
        if dims:
            plan.append((prev, dims[0], False, True))
            prev = dims[0]
            for d in dims[1:]:
                for _ in range(self.block_repeat):
                    plan.append((prev, d, True, True))
                    prev = d
        plan.append((prev, self.output_dim, False, False))
        return plan


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 1024
    learning_rate: float = 1e-2
    momentum: float = 0.9
    plateau_min_delta: float = 1e-2
    min_delta_mode: str = "rel"
    plateau_patience: int = 20
    lr_reduce_factor: float = 0.1
    early_stop_patience: int = 40
    max_epochs: int = 500
    seed: int = 0
    threads: int | None = 1

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch normalization needs a variance)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not 0 < self.lr_reduce_factor < 1:
            raise ValueError("lr_reduce_factor must be in (0, 1)")
        if self.min_delta_mode not in ("rel", "abs"):
            raise ValueError("min_delta_mode must be 'rel' or 'abs'")
        if min(self.plateau_patience, self.early_stop_patience, self.max_epochs) < 1:
            raise ValueError("patience values and max_epochs must be >= 1")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    norm: bool
    act: bool
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None


@dataclass
class Network:
    config: MlpConfig
    layers: list[Layer]
    density: int | None = None
    seed: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dtype(self):
        return self.layers[0].W.dtype

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Trainable arrays in a fixed order, keyed like ``'3.W'``."""
        out = []
        for i, layer in enumerate(self.layers):
            if layer.norm:
                out.append((f"{i}.gamma", layer.gamma))
                out.append((f"{i}.beta", layer.beta))
            out.append((f"{i}.W", layer.W))
            out.append((f"{i}.b", layer.b))
        return out

    def n_parameters(self) -> int:
        return sum(a.size for _, a in self.parameters())


class TrainingDivergedError(FloatingPointError):
    pass


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and a single transcendental call
    s = np.tanh(0.5 * x)
    s *= 0.5
    s += 0.5
    return s


def swish(x):
    return x * _sigmoid(np.asarray(x))


def init_network(cfg: MlpConfig, seed: int = 0, density: int | None = None, dtype=np.float64) -> Network:
    """Glorot-uniform weights, zero biases, identity batch-norm and fresh running stats."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, norm, act in cfg.layer_plan(density):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layer = Layer(
            W=rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
            b=np.zeros(fan_out, dtype=dtype),
            norm=norm,
            act=act,
        )
        if norm:
            layer.gamma = np.ones(fan_in, dtype=dtype)
            layer.beta = np.zeros(fan_in, dtype=dtype)
            layer.running_mean = np.zeros(fan_in, dtype=dtype)
            layer.running_var = np.ones(fan_in, dtype=dtype)
        layers.append(layer)
    return Network(cfg, layers, density=density, seed=seed)


def _bn(x, mean, var, gamma, beta, eps):
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, xhat, inv


def _check_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.config.input_dim or x.shape[0] < 1:
        raise ValueError(f"batch must have shape (B, {net.config.input_dim}), got {x.shape}")
    return x


def _forward(net: Network, x: np.ndarray, train: bool, update_stats: bool):
    cache = []
    h = x
    for layer in net.layers:
        entry = {}
        if layer.norm:
            if train:
                mean = h.mean(axis=0)
                var = ((h - mean) ** 2).mean(axis=0)
                if update_stats:
                    m = net.config.bn_momentum
                    layer.running_mean = m * layer.running_mean + (1 - m) * mean
                    layer.running_var = m * layer.running_var + (1 - m) * var
            else:
                mean, var = layer.running_mean, layer.running_var
            h, entry["xhat"], entry["inv"] = _bn(h, mean, var, layer.gamma, layer.beta, net.config.bn_epsilon)
        entry["in"] = h
        z = h @ layer.W
        z += layer.b
        if layer.act:
            s = _sigmoid(z)
            entry["z"], entry["s"] = z, s
            h = z * s
        else:
            h = z
        cache.append(entry)
    return h, cache


def forward(net: Network, batch, mode: str = "eval", update_stats: bool = True) -> np.ndarray:
    """Predictions of shape (B, output_dim).

    ``mode='train'`` normalizes with batch statistics and, unless
    ``update_stats`` is False, folds them into the running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = _check_batch(net, batch)
    if mode == "train" and len(x) < 2:
        raise ValueError("train-mode forward needs a batch of at least 2 samples")
    out, _ = _forward(net, x, mode == "train", update_stats)
    return out


def loss_mse(pred, labels) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {labels.shape}")
    return float(np.mean((pred - labels) ** 2))


def _labels_2d(net: Network, labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=net.dtype)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != (n, net.config.output_dim):
        raise ValueError(f"labels must have shape ({n}, {net.config.output_dim}), got {y.shape}")
    return y


def _backward(net: Network, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    grads = {}
    g = dout
    for i in range(len(net.layers) - 1, -1, -1):
        layer, entry = net.layers[i], cache[i]
        if layer.act:
            s, z = entry["s"], entry["z"]
            g = g * (s + z * s * (1.0 - s))
        grads[f"{i}.W"] = entry["in"].T @ g
        grads[f"{i}.b"] = g.sum(axis=0)
        g = g @ layer.W.T
        if layer.norm:
            xhat, inv = entry["xhat"], entry["inv"]
            grads[f"{i}.gamma"] = (g * xhat).sum(axis=0)
            grads[f"{i}.beta"] = g.sum(axis=0)
            dxhat = g * layer.gamma
            n = len(dxhat)
            g = (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return grads


def backward(net: Network, batch, labels, mode: str = "train") -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients of the MSE with respect to every trainable array.

    Running statistics are left untouched.
    """
    x = _check_batch(net, batch)
    y = _labels_2d(net, labels, len(x))
    if mode == "train" and len(x) < 2:
        raise ValueError("train-mode backward needs a batch of at least 2 samples")
    pred, cache = _forward(net, x, mode == "train", update_stats=False)
    diff = pred - y
    return float(np.mean(diff**2)), _backward(net, cache, (2.0 / diff.size) * diff)


def sgd_momentum_update(net: Network, grads: dict[str, np.ndarray], lr: float, momentum: float) -> Network:
    """Heavy-ball step: v <- momentum * v + g; p <- p - lr * v (in place)."""
    for name, param in net.parameters():
        g = grads[name]
        v = net.velocity.get(name)
        if v is None:
            v = np.zeros_like(param)
        elif v.shape != param.shape:
            raise ValueError(f"momentum buffer shape mismatch for {name}")
        v = momentum * v + g
        net.velocity[name] = v
        param -= lr * v
    return net


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)
    stop_reason: str = ""
    parallel: bool = False

    def append(self, epoch: int, loss: float, lr: float, wall: float) -> None:
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.lrs.append(lr)
        self.wall_seconds.append(wall)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.losses))

    def to_csv(self, path: str | Path, timing: bool = False) -> None:
        """Write (epoch, loss, lr, wall_seconds). Wall time is left blank unless
        ``timing`` is set, so that identical runs give identical files."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "lr", "wall_seconds"])
            for e, l, r, t in zip(self.epochs, self.losses, self.lrs, self.wall_seconds):
                w.writerow([e, repr(l), repr(r), f"{t:.3f}" if timing else ""])


def _improved(loss: float, best: float, tc: TrainingConfig) -> bool:
    if tc.min_delta_mode == "rel":
        return loss < best * (1.0 - tc.plateau_min_delta)
    return loss < best - tc.plateau_min_delta


def train(net: Network, dataset, tc: TrainingConfig, log=None) -> tuple[Network, History]:
    """Minibatch SGD with momentum until early stopping or ``max_epochs``.

    ``dataset`` is a :class:`trajinv.dataset.Dataset` or a ``(features, labels)``
    pair. An epoch's loss is the size-weighted mean of its train-mode batch
    losses. The plateau and early-stopping callbacks share the best loss;
    with ``min_delta_mode='rel'`` an epoch counts as an improvement when it
    beats the best by a factor ``1 - plateau_min_delta``.
    """
    if hasattr(dataset, "features"):
        feats, labels = dataset.features, dataset.labels
    else:
        feats, labels = dataset
    x_all = _check_batch(net, feats)
    y_all = _labels_2d(net, labels, len(x_all))
    n = len(x_all)
    if n == 0:
        raise ValueError("empty dataset")
    if tc.batch_size > n:
        raise ValueError(f"batch_size {tc.batch_size} exceeds dataset size {n}")

    rng = np.random.default_rng(tc.seed)
    history = History(parallel=tc.threads != 1)
    best = math.inf
    wait_plateau = wait_stop = 0
    reductions = 0
    lr = tc.learning_rate
    start = time.perf_counter()
    limits = threadpool_limits(limits=tc.threads) if tc.threads else nullcontext()
    with limits:
        for epoch in range(1, tc.max_epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            seen = 0
            for lo in range(0, n, tc.batch_size):
                idx = order[lo : lo + tc.batch_size]
                if len(idx) < 2:
                    continue
                xb, yb = x_all[idx], y_all[idx]
                pred, cache = _forward(net, xb, train=True, update_stats=True)
                diff = pred - yb
                batch_loss = float(np.mean(diff**2))
                if not math.isfinite(batch_loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, sample offset {lo}, lr {lr:g}")
                grads = _backward(net, cache, (2.0 / diff.size) * diff)
                sgd_momentum_update(net, grads, lr, tc.momentum)
                total += batch_loss * len(idx)
                seen += len(idx)
            loss = total / seen
            history.append(epoch, loss, lr, time.perf_counter() - start)
            if log is not None:
                log(f"epoch {epoch:4d}  loss {loss:.6e}  lr {lr:.1e}")

            if _improved(loss, best, tc):
                best = loss
                wait_plateau = wait_stop = 0
            else:
                wait_plateau += 1
                wait_stop += 1
            if wait_stop >= tc.early_stop_patience:
                history.stop_reason = "early_stopping"
                break
            if wait_plateau >= tc.plateau_patience:
                reductions += 1
                lr = tc.learning_rate * tc.lr_reduce_factor**reductions
                wait_plateau = 0
        else:
            history.stop_reason = "max_epochs"
    return net, history


def gradient_check(net: Network, batch, labels, h: float = 1e-5, floor: float = 1e-8) -> float:
    """Worst relative error between backprop and central differences over every parameter.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, grads = backward(net, batch, labels)
    x = _check_batch(net, batch)
    y = _labels_2d(net, labels, len(x))

    def loss() -> float:
        pred, _ = _forward(net, x, train=True, update_stats=False)
        return float(np.mean((pred - y) ** 2))

    worst = 0.0
    for name, param in net.parameters():
        flat = param.reshape(-1)
        analytic = grads[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss()
            flat[j] = orig - h
            down = loss()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            err = abs(analytic[j] - numeric) / max(abs(analytic[j]), abs(numeric), floor)
            worst = max(worst, err)
    return worst


MODEL_MAGIC = b"TMLP"
MODEL_VERSION = 1


def save_network(net: Network, path: str | Path) -> None:
    cfg = net.config
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        write_struct(fh, "II", MODEL_VERSION, len(cfg.layer_dims))
        write_struct(fh, f"{len(cfg.layer_dims)}I", *cfg.layer_dims)
        write_struct(
            fh,
            "IBIIddIQ",
            cfg.block_repeat,
            int(cfg.append_8192_when_density_exceeds_4096),
            cfg.input_dim,
            cfg.output_dim,
            cfg.bn_epsilon,
            cfg.bn_momentum,
            net.density or 0,
            net.seed,
        )
        for layer in net.layers:
            arrays = [layer.W, layer.b]
            if layer.norm:
                arrays += [layer.gamma, layer.beta, layer.running_mean, layer.running_var]
            for a in arrays:
                write_struct(fh, "Q", a.size)
                write_array(fh, a.reshape(-1), "f8")


def load_network(path: str | Path, dtype=np.float64) -> Network:
    with open(path, "rb") as fh:
        check_magic(fh, MODEL_MAGIC, MODEL_VERSION)
        (ndims,) = read_struct(fh, "I")
        dims = read_struct(fh, f"{ndims}I") if ndims else ()
        repeat, wide, din, dout, eps, mom, density, seed = read_struct(fh, "IBIIddIQ")
        cfg = MlpConfig(tuple(dims), repeat, bool(wide), din, dout, eps, mom)
        net = init_network(cfg, seed=seed, density=density or None, dtype=dtype)

        def read_into(target: np.ndarray) -> np.ndarray:
            (size,) = read_struct(fh, "Q")
            if size != target.size:
                raise FormatError(f"parameter length {size} does not match layer shape {target.shape}")
            return read_array(fh, "f8", size).reshape(target.shape).astype(dtype)

        for layer in net.layers:
            layer.W = read_into(layer.W)
            layer.b = read_into(layer.b)
            if layer.norm:
                layer.gamma = read_into(layer.gamma)
                layer.beta = read_into(layer.beta)
                layer.running_mean = read_into(layer.running_mean)
                layer.running_var = read_into(layer.running_var)
        if fh.read(1):
            raise FormatError("trailing bytes after model parameters")
    return net
