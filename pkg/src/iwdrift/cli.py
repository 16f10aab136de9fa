"""Command-line entry point: ``iwdrift <command> ...``.

Exit codes: 0 ok, 2 usage or configuration error, 3 data or file-format
error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, dynamics
from .bench import DEFAULT_SIZES, bench, equivalence_check
from .config import ConfigError, RunConfig, config_dict, dump_config, load_config
from .env import DriftEnv, EnvConfig, task_paths
from .evaluation import (TRACE_COLUMNS, default_ablation_specs, phase_plane_export, rollout_eval,
                         run_ablation, write_ablation_csv, write_trace)
from .paths import by_name, read_path_csv, write_path_csv
from .plots import path_overlay_svg, phase_plane_svg
from .ppo import CURVE_COLUMNS, train
from .rng import stream
from .runio import LockError, OutDirLock, now_iso, write_manifest

log = logging.getLogger("iwdrift")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
PATH_KINDS = ("circle", "eight", "variable", "rings", "random")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return Path(path)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return Path(path)


def resolve_path(spec: str, seed: int = 0):
    """A path kind name or a waypoint CSV file."""
    p = Path(spec)
    if p.suffix == ".csv" or p.exists():
        try:
            return read_path_csv(p)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read path file {p}: {exc}") from None
    if spec not in PATH_KINDS:
        raise UsageError(f"unknown path {spec!r}; expected one of {', '.join(PATH_KINDS)} or a CSV file")
    return by_name(spec, seed=seed)


def make_stepper(threads: int):
    if threads <= 1:
        return None
    return functools.partial(dynamics.step_batch, workers=threads)


# --- commands -----------------------------------------------------------------------

def cmd_gen_path(args, cfg: RunConfig, out: Path):
    kw = {}
    if args.kind not in PATH_KINDS:
        raise UsageError(f"unknown path kind {args.kind!r}")
    if args.kind in ("circle", "eight", "rings"):
        if not args.radius > 0:
            raise UsageError("radius must be positive")
        kw["radius"] = args.radius
    if args.kind == "circle":
        kw["direction"] = args.direction
    if args.kind == "random":
        kw["seed"] = stream(cfg.seed, "gen-path")
    path = by_name(args.kind, **kw)
    target = Path(args.file) if args.file else out / f"path_{args.kind}.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_path_csv(path, target)
    log.info("wrote %s (%d waypoints, length %.4f m)", target, path.n, path.total_length)
    return [target]


def _train_env(cfg: RunConfig, env_cfg: EnvConfig, seed: int):
    paths = task_paths(env_cfg, stream(seed, "paths"))
    return DriftEnv(paths, cfg.trainer.n_envs, env_cfg, cfg.vehicle, rng=stream(seed, "env"),
                    record=True, stepper=make_stepper(cfg.threads))


def _ckpt_meta(cfg: RunConfig, **extra):
    return {"trainer": config_dict(cfg)["trainer"], "obs_dim": cfg.env.obs_dim, "version": __version__, **extra}


def cmd_train(args, cfg: RunConfig, out: Path):
    env = _train_env(cfg, cfg.env, cfg.seed)
    ckpt = out / "policy.iwdp"
    files = []

    def on_update(update, net, row):
        if cfg.trainer.checkpoint_every > 0 and update % cfg.trainer.checkpoint_every == 0:
            checkpoint.save(ckpt, net, _ckpt_meta(cfg, update=update))

    net, curve, throughput = train(env, cfg.trainer, on_update=on_update)
    if not np.all(np.isfinite(net.params)):
        raise RuntimeError("training produced non-finite parameters")
    checkpoint.save(ckpt, net, _ckpt_meta(cfg, update=len(curve)))
    files += [ckpt, ckpt.with_name(ckpt.name + ".json")]
    files.append(write_rows(out / "learning_curve.csv", CURVE_COLUMNS, curve))
    # wall-clock numbers are kept apart so the curve stays byte-reproducible
    files.append(write_rows(out / "throughput.csv", ("update", "steps_per_sec", "update_seconds"), throughput))
    # thread count never changes results; it is left at its default here and recorded in the manifest
    (out / "config.txt").write_text(dump_config(replace(cfg, threads=RunConfig().threads)))
    files.append(out / "config.txt")
    return files


def evaluate_to_dir(net_or_policy, path, cfg: RunConfig, out: Path, n_trials: int, plots: bool,
                    stochastic: bool = False, stepper=None):
    report, traces = rollout_eval(net_or_policy, path, n_trials, cfg.seed, cfg.env, cfg.vehicle,
                                  laps=cfg.eval.laps, stepper=stepper, stochastic=stochastic,
                                  nominal=cfg.eval.nominal)
    files = [write_json(out / "report.json", asdict(report))]
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for i, tr in enumerate(traces):
        files.append(write_trace(tdir / f"trial_{i:03d}.csv", tr))
    files += phase_plane_export(traces, out / "phase")
    if plots:
        files.append(path_overlay_svg(path, traces, out / "path_overlay.svg", TRACE_COLUMNS))
        files.append(phase_plane_svg(traces, out / "phase_plane.svg", TRACE_COLUMNS))
    return report, files


def cmd_eval(args, cfg: RunConfig, out: Path):
    try:
        net = checkpoint.load(args.checkpoint, obs_dim=cfg.env.obs_dim, act_dim=5)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except checkpoint.CheckpointError as exc:
        raise DataError(f"{args.checkpoint}: {exc}") from None
    path = resolve_path(args.path or cfg.eval.path, cfg.seed)
    n = cfg.eval.n_trials if args.n_trials is None else args.n_trials
    if n < 0:
        raise UsageError("n-trials must be non-negative")
    plots = cfg.eval.plots and not args.no_plots
    report, files = evaluate_to_dir(net, path, cfg, out, n, plots, args.stochastic or cfg.eval.stochastic,
                                    make_stepper(cfg.threads))
    log.info("%s: rmse %.4f +- %.4f m, mean |beta| %.3f rad, success %.2f", report.path, report.rmse_mean,
             report.rmse_std, report.mean_abs_beta, report.success_rate)
    return files


def cmd_ablate(args, cfg: RunConfig, out: Path):
    steps = cfg.eval.ablation_env_steps or cfg.trainer.total_env_steps
    trainer_cfg = replace(cfg.trainer, total_env_steps=steps)
    specs = default_ablation_specs(cfg.eval.ablation_trials)
    if args.methods:
        wanted = args.methods.split(",")
        unknown = set(wanted) - {s.method for s in specs}
        if unknown:
            raise UsageError(f"unknown ablation methods: {sorted(unknown)}")
        specs = [s for s in specs if s.method in wanted]
    files = []
    cdir = out / "checkpoints"
    cdir.mkdir(exist_ok=True)

    def train_fn(env_cfg, seed):
        run_cfg = replace(cfg, env=env_cfg, trainer=trainer_cfg)
        env = _train_env(run_cfg, env_cfg, seed)
        net, curve, _ = train(env, trainer_cfg)
        tag = _tag(env_cfg)
        checkpoint.save(cdir / f"{tag}.iwdp", net, _ckpt_meta(run_cfg, method=tag))
        files.extend([cdir / f"{tag}.iwdp", cdir / f"{tag}.iwdp.json"])
        files.append(write_rows(cdir / f"{tag}_curve.csv", CURVE_COLUMNS, curve))
        return net

    def _tag(env_cfg):
        r = env_cfg.rand
        off = [k for k in ("tire", "init_state", "disturbance", "trajectory") if not getattr(r, k)]
        return "full" if not off else "no_" + "_".join(off)

    path = resolve_path(args.path or "eight", cfg.seed)
    rows, reports = run_ablation(train_fn, specs, cfg.seed, path, cfg.env, cfg.vehicle)
    files.append(write_ablation_csv(out / "ablation.csv", rows))
    files.append(write_json(out / "ablation_reports.json",
                            [asdict(r) if r is not None else None for r in reports]))
    failed = [r[0] for r in rows if reports[rows.index(r)] is None]
    if failed:
        log.warning("ablation rows failed to train: %s (recorded with success 0)", ", ".join(failed))
    return files


def cmd_bench(args, cfg: RunConfig, out: Path):
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else DEFAULT_SIZES
    workers = sorted({1, max(cfg.threads, 1)} | ({args.max_workers} if args.max_workers else set()))
    rows = bench(sizes, args.steps, workers, cfg.seed)
    eq = equivalence_check(min(1024, max(sizes)), min(args.steps, 10), cfg.seed) if args.steps > 0 else None
    # hashes are reproducible; timings go to a separate file
    # one hash per batch size: every worker count must reach the same final state
    by_size = {}
    for r in rows:
        by_size.setdefault(r.instances, set()).add(r.state_hash)
    det = {"rows": [{"instances": n, "steps": args.steps, "state_hash": min(h), "workers_agree": len(h) == 1}
                    for n, h in by_size.items()],
           "equivalence": None if eq is None else {k: eq[k] for k in
                                                  ("instances", "steps", "batch_hash", "sequential_hash", "equal")}}
    timing = [{"instances": r.instances, "workers": r.workers, "steps": r.steps, "seconds": r.seconds,
               "steps_per_sec": r.steps_per_sec if r.steps_per_sec is not None else "n/a"} for r in rows]
    files = [write_json(out / "bench.json", det), write_json(out / "bench_timing.json", timing)]
    for r in timing:
        sps = r["steps_per_sec"]
        msg = "n/a" if sps == "n/a" else f"{sps:,.0f} vehicle-steps/s"
        print(f"instances={r['instances']:>6} workers={r['workers']:>2} {msg}")
    if eq is not None:
        print(f"batch vs sequential ({eq['instances']} vehicles): {'equal' if eq['equal'] else 'DIFFERENT'}")
    return files


COMMANDS = {"gen-path": cmd_gen_path, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iwdrift", description="Drift-control training and evaluation toolkit.")
    ap.add_argument("--version", action="version", version=f"iwdrift {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="section.key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", default="runs/out", help="output directory (default: runs/out)")
    common.add_argument("--threads", type=int, help="worker threads for batched stepping")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-path", parents=[common], help="write a reference path CSV")
    g.add_argument("kind", help="|".join(PATH_KINDS))
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--direction", type=int, choices=(1, -1), default=1)
    g.add_argument("--file", help="output file (default: <out>/path_<kind>.csv)")

    sub.add_parser("train", parents=[common], help="train a policy with PPO")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--path", help="path kind or waypoint CSV (default: eval.path)")
    e.add_argument("--n-trials", type=int)
    e.add_argument("--stochastic", action="store_true", help="sample actions instead of using the mean")
    e.add_argument("--no-plots", action="store_true")

    a = sub.add_parser("ablate", parents=[common], help="randomization ablation study")
    a.add_argument("--methods", help="comma-separated subset of full,no_tire,no_init_state,"
                                     "no_disturbance,no_trajectory")
    a.add_argument("--path", help="evaluation path (default: eight)")

    b = sub.add_parser("bench", parents=[common], help="stepping throughput")
    b.add_argument("--sizes", help="comma-separated instance counts (default: 1,64,1024,8192)")
    b.add_argument("--steps", type=int, default=100)
    b.add_argument("--max-workers", type=int, help="extra worker count to time")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", force=True)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be at least 1")
            cfg = replace(cfg, threads=args.threads)
        out = Path(args.out)
        started = now_iso()
        with OutDirLock(out):
            files = COMMANDS[args.command](args, cfg, out)
            write_manifest(out, args.command, config_dict(cfg), cfg.seed, files, started,
                           {"argv": list(sys.argv[1:] if argv is None else argv)})
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"iwdrift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, checkpoint.CheckpointError) as exc:
        print(f"iwdrift: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (LockError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"iwdrift: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"iwdrift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
