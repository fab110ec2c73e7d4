"""Command-line entry points.

Subcommands: train, interpolate, barriers, deviation, run, export. All
failures exit nonzero after printing a single machine-parsable line of the
form `error: <message>` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from linpath import analysis, experiment, interp, store
from linpath.config import ExperimentConfig
from linpath.errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    ExperimentStateError,
    ShapeMismatchError,
    SpecError,
    TrainingDivergedError,
)

_FAILURES = (CheckpointError, ConfigError, DataFormatError, ExperimentStateError,
             ShapeMismatchError, SpecError, TrainingDivergedError,
             FileNotFoundError, ValueError)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _load_exp(exp_dir: Path) -> ExperimentConfig:
    run_path = exp_dir / "run.json"
    if not run_path.exists():
        raise ExperimentStateError(f"{exp_dir} has no run manifest (run.json)")
    return ExperimentConfig.from_dict(json.loads(run_path.read_text())["config"])


def _emit(lines: list[str], out: str | None):
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    exp_dir = experiment.run_experiment(cfg, args.out, parallel=args.parallel)
    print(f"experiment complete: {exp_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    exp_dir = Path(args.out) / cfg.name
    exp_dir.mkdir(parents=True, exist_ok=True)
    state = experiment._State(exp_dir, cfg.digest())
    train_ds, test_ds = experiment.load_datasets(cfg.dataset)
    experiment._write_run_manifest(cfg, exp_dir, train_ds, test_ds)
    for seed in cfg.seeds:
        if state.done(f"train:{seed}"):
            continue
        experiment.stage_train(cfg, exp_dir, seed, train_ds)
        state.mark(f"train:{seed}")
    print(f"checkpoints written under {exp_dir}")
    return 0


def cmd_interpolate(args) -> int:
    if args.exp:
        exp_dir = Path(args.exp)
        cfg = _load_exp(exp_dir)
        t_to = args.t_to if args.t_to is not None else cfg.hyperparams.t_max
        ckpt_from = store.load(store.checkpoint_path(exp_dir, args.seed, args.t_from))
        ckpt_to = store.load(store.checkpoint_path(exp_dir, args.seed, t_to))
    else:
        if not (args.from_ckpt and args.to_ckpt and args.config):
            raise ConfigError("need either --exp/--seed/--t-from or "
                              "--from-ckpt/--to-ckpt/--config")
        cfg = ExperimentConfig.from_file(args.config)
        ckpt_from = store.load(args.from_ckpt)
        ckpt_to = store.load(args.to_ckpt)
    _, test_ds = experiment.load_datasets(cfg.dataset)
    n_points = args.n_points or cfg.n_points
    bn_mode = args.bn_mode or cfg.bn_mode
    curve = interp.evaluate_path(ckpt_from, ckpt_to, test_ds,
                                 n_points=n_points, bn_mode=bn_mode)
    lines = [f"# seed={curve.seed} t_from={curve.t_from} t_to={curve.t_to} "
             f"bn_mode={curve.bn_mode} n_examples={curve.n_examples}",
             "alpha,loss_nats,error"]
    lines += [f"{_fmt(a)},{_fmt(l)},{_fmt(e)}"
              for a, l, e in zip(curve.alphas, curve.losses, curve.errors)]
    _emit(lines, args.out)
    return 0


def cmd_barriers(args) -> int:
    exp_dir = Path(args.exp)
    cfg = _load_exp(exp_dir)
    definition = args.definition or cfg.barrier_definition
    curves = []
    for seed in cfg.seeds:
        payload = experiment._load_seed_curves(exp_dir, seed)
        curves += [experiment._curve_from_dict(d) for d in payload["curves"]]
    report = analysis.barrier_report(curves, definition)
    lines = [",".join(experiment.BARRIERS_HEADER[2:])]
    for t, stats in report.per_t.items():
        lines.append(",".join([str(t),
                               _fmt(stats["loss_barrier_mean"]), _fmt(stats["loss_barrier_std"]),
                               _fmt(stats["error_barrier_mean"]),
                               _fmt(stats["error_barrier_std"]), definition]))
    _emit(lines, args.out)
    return 0


def cmd_deviation(args) -> int:
    exp_dir = Path(args.exp)
    cfg = _load_exp(exp_dir)
    lines = ["seed,iteration,distance,coordinate"]
    for seed in cfg.seeds:
        payload = experiment._load_seed_curves(exp_dir, seed)
        for p in payload["deviation"]:
            lines.append(f"{seed},{p['iteration']},{_fmt(p['distance'])},"
                         f"{_fmt(p['coordinate'])}")
    _emit(lines, args.out)
    return 0


def cmd_export(args) -> int:
    files = experiment.export(args.exp, fmt=args.format, out_dir=args.out)
    for f in files:
        print(f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linpath",
                                description="Train, checkpoint, interpolate, and "
                                            "measure loss along linear paths in weight space.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full protocol: train, interpolate, aggregate, export")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--parallel", type=int, default=0,
                     help="run replicates in this many processes (default: sequential)")
    run.set_defaults(fn=cmd_run)

    tr = sub.add_parser("train", help="train replicates and write scheduled checkpoints")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True)
    tr.set_defaults(fn=cmd_train)

    it = sub.add_parser("interpolate", help="evaluate one interpolation path")
    it.add_argument("--exp", help="experiment directory (with --seed/--t-from)")
    it.add_argument("--seed", type=int)
    it.add_argument("--t-from", type=int)
    it.add_argument("--t-to", type=int)
    it.add_argument("--from-ckpt", help="explicit source checkpoint file")
    it.add_argument("--to-ckpt", help="explicit target checkpoint file")
    it.add_argument("--config", help="config supplying the dataset (with --from-ckpt)")
    it.add_argument("--n-points", type=int)
    it.add_argument("--bn-mode", choices=("interpolate", "recalibrate"))
    it.add_argument("--out")
    it.set_defaults(fn=cmd_interpolate)

    ba = sub.add_parser("barriers", help="barrier heights per source iteration")
    ba.add_argument("--exp", required=True)
    ba.add_argument("--definition", choices=analysis.BARRIER_DEFINITIONS)
    ba.add_argument("--out")
    ba.set_defaults(fn=cmd_barriers)

    dv = sub.add_parser("deviation", help="trajectory deviation from the init-final line")
    dv.add_argument("--exp", required=True)
    dv.add_argument("--out")
    dv.set_defaults(fn=cmd_deviation)

    ex = sub.add_parser("export", help="re-emit curves/barriers/deviation outputs")
    ex.add_argument("--exp", required=True)
    ex.add_argument("--format", choices=("csv", "json"), default="csv")
    ex.add_argument("--out")
    ex.set_defaults(fn=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _FAILURES as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
