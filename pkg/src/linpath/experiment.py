"""End-to-end experiment orchestration.

For each replicate seed: train and save scheduled checkpoints, evaluate the
interpolation path from every scheduled iteration to the final state on the
test set, and compute trajectory deviations. Then aggregate across seeds and
emit curves.csv, barriers.csv, deviation.csv, and metadata.json.

Every stage records completion in state.json (keyed to the config digest),
so re-running a finished experiment does no work and a partially complete
directory resumes where it stopped. A directory holding a different config
is reported as an error, never overwritten.
"""

from __future__ import annotations

import csv
import json
import os
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from linpath import analysis, interp, store
from linpath.config import DatasetConfig, ExperimentConfig
from linpath.data import Dataset, load_cifar10, load_idx, synthetic_blobs
from linpath.errors import ExperimentStateError
from linpath.interp import PathCurve
from linpath.trainer import checkpoint_schedule, train

CSV_KWARGS = {"lineterminator": "\n"}

CURVES_HEADER = ["model", "dataset", "seed", "t_from", "alpha", "loss_nats", "error"]
BARRIERS_HEADER = ["model", "dataset", "t_from", "loss_barrier_mean", "loss_barrier_std",
                   "error_barrier_mean", "error_barrier_std", "definition_tag"]
DEVIATION_HEADER = ["model", "dataset", "seed", "iteration", "distance", "coordinate"]


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def load_datasets(dc: DatasetConfig) -> tuple[Dataset, Dataset]:
    """Materialize (train, test) from a dataset config; fails fast if absent."""
    if dc.kind == "idx":
        train = load_idx(dc.train_images, dc.train_labels, split="train")
        test = load_idx(dc.test_images, dc.test_labels, split="test")
    elif dc.kind == "cifar10":
        train = load_cifar10(dc.dir, split="train", per_class=dc.per_class,
                             seed=dc.subsample_seed)
        test = load_cifar10(dc.dir, split="test", per_class=dc.test_per_class,
                            seed=dc.subsample_seed)
    elif dc.kind == "blobs":
        kw = dict(classes=dc.classes, dims=dc.dims, per_class=dc.per_class,
                  separation=dc.separation, seed=dc.seed,
                  train_fraction=dc.train_fraction)
        train = synthetic_blobs(split="train", **kw)
        test = synthetic_blobs(split="test", **kw)
    else:
        raise ValueError(f"unknown dataset kind {dc.kind!r}")
    return train, test


def _dataset_tag(dc: DatasetConfig, test: Dataset) -> str:
    return f"{dc.kind}-{test.digest:08x}"


class _State:
    """Atomic completion markers for the experiment stages."""

    def __init__(self, exp_dir: Path, digest: str):
        self.path = exp_dir / "state.json"
        self.digest = digest
        if self.path.exists():
            d = json.loads(self.path.read_text())
            if d.get("config_digest") != digest:
                raise ExperimentStateError(
                    f"{exp_dir} holds a different experiment "
                    f"(config digest {d.get('config_digest')!r} != {digest!r}); "
                    "refusing to overwrite")
            self.stages = set(d.get("stages", []))
        else:
            self.stages = set()

    def done(self, stage: str) -> bool:
        return stage in self.stages

    def mark(self, stage: str):
        self.stages.add(stage)
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps({"config_digest": self.digest,
                                   "stages": sorted(self.stages)}, indent=2) + "\n")
        os.replace(tmp, self.path)


def _write_run_manifest(cfg: ExperimentConfig, exp_dir: Path, train: Dataset, test: Dataset):
    manifest = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "schedule": checkpoint_schedule(cfg.hyperparams.t_max),
        "dataset_digests": {"train": f"{train.digest:08x}", "test": f"{test.digest:08x}"},
        "tags": {
            "loss_unit": "nats",
            "alpha_grid": "endpoint-inclusive",
            "bn_mode": cfg.bn_mode,
            "barrier_definition": cfg.barrier_definition,
            "std_kind": "population",
            "augmentation": "none",
            "lr_semantics": "lr(t) is the rate applied to the update from state t to t+1",
            "eval_split": "test",
        },
        "checkpoint_format_version": store.FORMAT_VERSION,
    }
    path = exp_dir / "run.json"
    if path.exists():
        existing = json.loads(path.read_text())
        if existing.get("config_digest") != manifest["config_digest"]:
            raise ExperimentStateError(f"{path} belongs to a different experiment")
        return
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def stage_train(cfg: ExperimentConfig, exp_dir: Path, seed: int, train_ds: Dataset):
    for ckpt in train(cfg.model, cfg.hyperparams, train_ds, seed):
        store.save(ckpt, store.checkpoint_path(exp_dir, seed, ckpt.iteration))


def _curve_to_dict(c: PathCurve) -> dict:
    return {"t_from": c.t_from, "t_to": c.t_to, "seed": c.seed, "bn_mode": c.bn_mode,
            "spec_hash": c.spec_hash, "n_examples": c.n_examples,
            "alphas": c.alphas.tolist(), "losses": c.losses.tolist(),
            "errors": c.errors.tolist()}


def _curve_from_dict(d: dict) -> PathCurve:
    return PathCurve(alphas=np.array(d["alphas"], dtype=np.float64),
                     losses=np.array(d["losses"], dtype=np.float64),
                     errors=np.array(d["errors"], dtype=np.float64),
                     t_from=d["t_from"], t_to=d["t_to"], seed=d["seed"],
                     bn_mode=d["bn_mode"], spec_hash=d["spec_hash"],
                     n_examples=d["n_examples"])


def stage_curves(cfg: ExperimentConfig, exp_dir: Path, seed: int, test_ds: Dataset):
    schedule = checkpoint_schedule(cfg.hyperparams.t_max)
    final = store.load(store.checkpoint_path(exp_dir, seed, schedule[-1]))
    ckpts = {t: store.load(store.checkpoint_path(exp_dir, seed, t)) for t in schedule}
    curves = [
        interp.evaluate_path(ckpts[t], final, test_ds, n_points=cfg.n_points,
                             bn_mode=cfg.bn_mode)
        for t in schedule
    ]
    deviations = analysis.path_deviation([ckpts[t] for t in schedule],
                                         ckpts[0], final)
    curves_dir = exp_dir / "curves"
    curves_dir.mkdir(exist_ok=True)
    payload = {"config_digest": cfg.digest(), "seed": seed,
               "curves": [_curve_to_dict(c) for c in curves],
               "deviation": [{"iteration": p.iteration, "distance": p.distance,
                              "coordinate": p.coordinate} for p in deviations]}
    (curves_dir / f"seed_{seed}.json").write_text(
        json.dumps(payload, sort_keys=True) + "\n")


def _load_seed_curves(exp_dir: Path, seed: int) -> dict:
    path = exp_dir / "curves" / f"seed_{seed}.json"
    if not path.exists():
        raise ExperimentStateError(f"missing curve data for seed {seed}: {path}")
    return json.loads(path.read_text())


def _write_csv(path: Path, digest: str, header: list[str], rows):
    with open(path, "w", newline="") as f:
        f.write(f"# config_digest={digest}\n")
        writer = csv.writer(f, **CSV_KWARGS)
        writer.writerow(header)
        writer.writerows(rows)


def stage_export(cfg: ExperimentConfig, exp_dir: Path, test_ds: Dataset):
    digest = cfg.digest()
    model = cfg.model.label()
    ds_tag = _dataset_tag(cfg.dataset, test_ds)
    schedule = checkpoint_schedule(cfg.hyperparams.t_max)

    per_seed = {seed: _load_seed_curves(exp_dir, seed) for seed in cfg.seeds}

    curve_rows = []
    by_t: dict[int, list[PathCurve]] = {t: [] for t in schedule}
    for seed in cfg.seeds:
        for cd in per_seed[seed]["curves"]:
            curve = _curve_from_dict(cd)
            by_t[curve.t_from].append(curve)
            for a, l, e in zip(curve.alphas, curve.losses, curve.errors):
                curve_rows.append([model, ds_tag, seed, curve.t_from,
                                   _fmt(a), _fmt(l), _fmt(e)])
    _write_csv(exp_dir / "curves.csv", digest, CURVES_HEADER, curve_rows)

    barrier_rows = []
    for t in schedule:
        report = analysis.barrier_report(by_t[t], cfg.barrier_definition)
        stats = report.per_t[t]
        barrier_rows.append([model, ds_tag, t,
                             _fmt(stats["loss_barrier_mean"]), _fmt(stats["loss_barrier_std"]),
                             _fmt(stats["error_barrier_mean"]), _fmt(stats["error_barrier_std"]),
                             cfg.barrier_definition])
    _write_csv(exp_dir / "barriers.csv", digest, BARRIERS_HEADER, barrier_rows)

    deviation_rows = []
    for seed in cfg.seeds:
        for p in per_seed[seed]["deviation"]:
            deviation_rows.append([model, ds_tag, seed, p["iteration"],
                                   _fmt(p["distance"]), _fmt(p["coordinate"])])
    _write_csv(exp_dir / "deviation.csv", digest, DEVIATION_HEADER, deviation_rows)

    run_manifest = json.loads((exp_dir / "run.json").read_text())
    metadata = dict(run_manifest)
    metadata["replicate_count"] = len(cfg.seeds)
    metadata["n_points"] = cfg.n_points
    (exp_dir / "metadata.json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def _seed_worker(args) -> int:
    cfg, exp_dir, seed, todo = args
    train_ds, test_ds = load_datasets(cfg.dataset)
    if "train" in todo:
        stage_train(cfg, exp_dir, seed, train_ds)
    if "curves" in todo:
        stage_curves(cfg, exp_dir, seed, test_ds)
    return seed


def run_experiment(cfg: ExperimentConfig, out_root, parallel: int = 0) -> Path:
    """Run the full protocol; idempotent over completed stages.

    `parallel` > 1 runs per-seed work in that many worker processes; outputs
    are identical to a sequential run.
    """
    exp_dir = Path(out_root) / cfg.name
    exp_dir.mkdir(parents=True, exist_ok=True)
    state = _State(exp_dir, cfg.digest())

    train_ds, test_ds = load_datasets(cfg.dataset)  # fail fast if data missing
    _write_run_manifest(cfg, exp_dir, train_ds, test_ds)

    pending = []
    for seed in cfg.seeds:
        todo = [s for s in ("train", "curves") if not state.done(f"{s}:{seed}")]
        if todo:
            pending.append((cfg, exp_dir, seed, todo))

    if parallel > 1 and len(pending) > 1:
        with get_context("spawn").Pool(min(parallel, len(pending))) as pool:
            for _ in pool.imap_unordered(_seed_worker, pending):
                pass
    else:
        for _, _, seed, todo in pending:
            if "train" in todo:
                stage_train(cfg, exp_dir, seed, train_ds)
            if "curves" in todo:
                stage_curves(cfg, exp_dir, seed, test_ds)
    for _, _, seed, todo in pending:
        for s in todo:
            state.mark(f"{s}:{seed}")

    if not state.done("export"):
        stage_export(cfg, exp_dir, test_ds)
        state.mark("export")
    return exp_dir


def export(exp_dir, fmt: str = "csv", out_dir=None) -> list[Path]:
    """Re-emit experiment outputs from stored per-seed results.

    Deterministic: exporting twice produces byte-identical files. Raises if
    the experiment is incomplete, naming the missing stages.
    """
    exp_dir = Path(exp_dir)
    run_path = exp_dir / "run.json"
    if not run_path.exists():
        raise ExperimentStateError(f"{exp_dir} has no run manifest (run.json)")
    run_manifest = json.loads(run_path.read_text())
    cfg = ExperimentConfig.from_dict(run_manifest["config"])
    state = _State(exp_dir, cfg.digest())
    missing = [s for seed in cfg.seeds for s in (f"train:{seed}", f"curves:{seed}")
               if not state.done(s)]
    if missing:
        raise ExperimentStateError(f"experiment incomplete; missing stages: {missing}")
    out_dir = Path(out_dir) if out_dir is not None else exp_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    if fmt == "csv":
        _, test_ds = load_datasets(cfg.dataset)
        stage_export(cfg, exp_dir, test_ds)
        if out_dir != exp_dir:
            for name in ("curves.csv", "barriers.csv", "deviation.csv", "metadata.json"):
                (out_dir / name).write_bytes((exp_dir / name).read_bytes())
        return [out_dir / "curves.csv", out_dir / "barriers.csv", out_dir / "deviation.csv"]
    if fmt == "json":
        payload = {
            "config": run_manifest["config"],
            "config_digest": run_manifest["config_digest"],
            "tags": run_manifest["tags"],
            "schedule": run_manifest["schedule"],
            "dataset_digests": run_manifest["dataset_digests"],
            "replicate_count": len(cfg.seeds),
            "replicates": [_load_seed_curves(exp_dir, seed) for seed in cfg.seeds],
        }
        path = out_dir / "experiment.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return [path]
    raise ValueError(f"unknown export format {fmt!r}")
