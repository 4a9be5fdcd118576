"""Command-line pipeline: bake, subsample, dataset, train, eval, solve, stats.

Exit codes: 0 success, 1 domain failure (miss or out-of-envelope target),
2 usage/config error, 3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import evaluation, grid as grid_mod, mlp, solver
from ._binio import FormatError
from .config import ConfigError, RunConfig, load_run_config

log = logging.getLogger("trajinv")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker/BLAS threads; 1 = bitwise reproducible, 0 = all cores")
    p.add_argument("--csv", action="store_true", help="write CSV instead of the binary/JSON output")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajinv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bake", help="simulate the angular trajectory grid")
    _add_common(p)
    p.add_argument("--profile", help="built-in profile name or key=value profile file")
    p.add_argument("--density", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--integrator", choices=("euler", "semi_implicit"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("subsample", help="subsample a baked grid by its last-point spacing mean")
    _add_common(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dataset", help="build training samples from a subsampled grid")
    _add_common(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--r-max", type=float, help="feature normalization range (default: grid radius)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the inverse network")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--history", help="history CSV (default: <out>.history.csv)")
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds in the history")
    p.add_argument("--layer-dims")
    p.add_argument("--block-repeat", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--plateau-min-delta", type=float)
    p.add_argument("--min-delta-mode", choices=("rel", "abs"))
    p.add_argument("--plateau-patience", type=int)
    p.add_argument("--lr-reduce-factor", type=float)
    p.add_argument("--early-stop-patience", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--precision", choices=("float32", "float64"), help="training arithmetic (default float32)")

    p = sub.add_parser("eval", help="metrics report for a trained model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", help="baked grid supplying the profile for closed-loop re-simulation")
    p.add_argument("--closed-loop-targets", type=int)
    p.add_argument("--density", type=int, help="expected angular density")
    p.add_argument("--out", help="metrics file (JSON lines, or CSV with --csv)")

    p = sub.add_parser("solve", help="baseline inverse solve for one 3D target")
    _add_common(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--target", required=True, help="X,Y,Z in meters")
    p.add_argument("--threshold", type=float, help="hit threshold in meters (default: spacing mean)")

    p = sub.add_parser("stats", help="spacing statistics and sample counts")
    _add_common(p)
    p.add_argument("--grid")
    p.add_argument("--dataset")
    return parser


_RUN_KEYS = {
    "profile", "density", "radius", "dt", "max_steps", "integrator", "layer_dims", "block_repeat",
    "batch_size", "learning_rate", "momentum", "plateau_min_delta", "min_delta_mode", "plateau_patience",
    "lr_reduce_factor", "early_stop_patience", "max_epochs", "closed_loop_targets", "threshold", "seed",
    "threads", "precision",
}  # fmt: skip


def _run_config(args) -> tuple[RunConfig, frozenset[str]]:
    overrides = {k: getattr(args, k) for k in _RUN_KEYS if getattr(args, k, None) is not None}
    return load_run_config(args.config, **overrides), frozenset(overrides)


def cmd_bake(args) -> int:
    cfg, explicit = _run_config(args)
    sim = cfg.sim_config(explicit)
    profile, _ = cfg.profile_and_overrides()
    grid = grid_mod.bake_grid(sim, profile, threads=cfg.resolved_threads())
    if args.csv:
        grid_mod.export_grid_csv(grid, args.out)
    else:
        grid_mod.save_grid(grid, args.out)
    counts = grid.point_counts()
    causes = np.bincount([int(t.termination) for t in grid.trajectories], minlength=3)
    print(
        f"baked s={grid.density} R={sim.max_radius:g} m dt={sim.dt:g}: spacing mean {grid.spacing_mean:.6g} m, "
        f"variance {grid.spacing_variance:.6g} m^2; points/trajectory min {counts.min()} "
        f"median {int(np.median(counts))} max {counts.max()} total {counts.sum()}; "
        f"termination radius/ground/cap {causes[0]}/{causes[1]}/{causes[2]} -> {args.out}"
    )
    return EXIT_OK


def cmd_subsample(args) -> int:
    grid = grid_mod.load_grid(args.grid)
    sub = grid_mod.subsample_grid(grid)
    if args.csv:
        grid_mod.export_grid_csv(sub, args.out)
    else:
        grid_mod.save_grid(sub, args.out)
    bad = sub.unsatisfiable
    print(
        f"subsampled {sub.density} trajectories to {int(sub.point_counts().sum())} points "
        f"(bound {sub.spacing_mean:.6g} m, {len(bad)} unsatisfiable) -> {args.out}"
    )
    return EXIT_OK


def cmd_dataset(args) -> int:
    grid = grid_mod.load_grid(args.grid)
    if not grid.subsampled:
        raise UsageError("dataset needs a subsampled grid; run `subsample` first")
    data = ds_mod.build_dataset(grid, args.r_max)
    if args.csv:
        ds_mod.export_dataset_csv(data, args.out)
    else:
        ds_mod.save_dataset(data, args.out)
    print(f"dataset: {len(data)} samples, s={data.density}, r_max={data.r_max:g} m -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, _ = _run_config(args)
    data = ds_mod.load_dataset(args.dataset)
    tc = cfg.training_config()
    net = mlp.init_network(cfg.mlp_config(), seed=cfg.seed, density=data.density, dtype=cfg.training_dtype())
    log_fn = log.info if args.verbose else None
    net, history = mlp.train(net, data, tc, log=log_fn)
    mlp.save_network(net, args.out)
    hist_path = args.history or f"{args.out}.history.csv"
    history.to_csv(hist_path, timing=args.timing)
    print(
        f"trained {net.n_parameters()} parameters for {len(history.epochs)} epochs "
        f"({history.stop_reason}); final loss {history.losses[-1]:.6e}, lr {history.lrs[-1]:.1e} "
        f"-> {args.out}, {hist_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, _ = _run_config(args)
    net = mlp.load_network(args.model)
    data = ds_mod.load_dataset(args.dataset)
    report = evaluation.evaluate_model(net, data, args.density or data.density)
    if args.grid and cfg.closed_loop_targets > 0:
        grid = grid_mod.load_grid(args.grid)
        if grid.density != data.density:
            raise evaluation.DensityMismatchError(f"grid density {grid.density} != dataset density {data.density}")
        rng = np.random.default_rng(cfg.seed)
        n = min(cfg.closed_loop_targets, len(data))
        pick = np.sort(rng.choice(len(data), size=n, replace=False))
        targets = data.features[pick, :2] * data.r_max
        report.closed_loop = evaluation.closed_loop_miss(net, targets, grid.sim_config, grid.profile, r_max=data.r_max)
        report.seed = cfg.seed
    print(report.table())
    if args.out:
        if args.csv:
            report.to_csv(args.out)
        else:
            report.to_jsonl(args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg, _ = _run_config(args)
    try:
        target = tuple(float(v) for v in args.target.split(","))
    except ValueError:
        target = ()
    if len(target) != 3:
        raise UsageError(f"--target must be X,Y,Z, got {args.target!r}")
    grid = grid_mod.load_grid(args.grid)
    index = solver.build_index(grid)
    try:
        res = solver.solve_initial_conditions(index, grid, target, cfg.threshold)
        status = "hit" if res.hit else "miss"
    except solver.OutOfEnvelopeError as exc:
        res, status = exc.result, "out_of_envelope"
    if args.csv:
        print("status,angle_deg,angle_rad,azimuth_rad,speed,miss_distance,point_distance")
        print(
            f"{status},{math.degrees(res.elevation_angle)!r},{res.elevation_angle!r},{res.azimuth!r},"
            f"{res.speed!r},{res.miss_distance!r},{res.point_distance!r}"
        )
    else:
        print(f"status        {status}")
        print(f"elevation     {math.degrees(res.elevation_angle):.6f} deg ({res.elevation_angle:.9f} rad)")
        print(f"azimuth       {res.azimuth:.9f} rad")
        print(f"speed         {res.speed:g} m/s")
        print(f"miss distance {res.miss_distance:.6f} m (threshold {res.threshold:.6f} m)")
    return EXIT_OK if status == "hit" else EXIT_DOMAIN


def cmd_stats(args) -> int:
    if not (args.grid or args.dataset):
        raise UsageError("stats needs --grid and/or --dataset")
    rows = []
    if args.grid:
        g = grid_mod.load_grid(args.grid)
        rows += [
            ("angular_density", g.density),
            ("max_radius_m", g.sim_config.max_radius),
            ("spacing_mean_m", g.spacing_mean),
            ("spacing_variance_m2", g.spacing_variance),
            ("mean_over_variance", g.spacing_mean / g.spacing_variance if g.spacing_variance else math.inf),
            ("subsampled", int(g.subsampled)),
            ("grid_points", int(g.point_counts().sum())),
        ]
    if args.dataset:
        d = ds_mod.load_dataset(args.dataset)
        rows += [("dataset_density", d.density), ("dataset_samples", len(d))]
    for key, value in rows:
        print(f"{key},{value}" if args.csv else f"{key:22s} {value}")
    return EXIT_OK


COMMANDS = {
    "bake": cmd_bake,
    "subsample": cmd_subsample,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "solve": cmd_solve,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, evaluation.DensityMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
