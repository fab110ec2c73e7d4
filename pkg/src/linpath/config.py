"""Experiment configuration: a versioned JSON file with a strict schema.

Unknown keys are errors, not warnings; a silently ignored typo would
invalidate an experiment. Configs round-trip losslessly through their file
representation, and their digest (SHA-256 of the canonical serialization)
is embedded in every output file for provenance checks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from linpath.errors import ConfigError
from linpath.nn.spec import (
    DEFAULT_BLOCKS_PER_STAGE,
    DEFAULT_STAGE_WIDTHS,
    KIND_MLP,
    KIND_RESNET_MINI,
    ModelSpec,
)
from linpath.trainer import Hyperparams

CONFIG_VERSION = 1

DATASET_KINDS = ("idx", "cifar10", "blobs")


@dataclass
class DatasetConfig:
    kind: str
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    dir: str | None = None
    per_class: int | None = None
    test_per_class: int | None = None
    subsample_seed: int = 0
    classes: int | None = None
    dims: int | None = None
    separation: float | None = None
    seed: int | None = None
    train_fraction: float = 0.8

    def to_dict(self) -> dict:
        if self.kind == "idx":
            return {"kind": self.kind, "train_images": self.train_images,
                    "train_labels": self.train_labels, "test_images": self.test_images,
                    "test_labels": self.test_labels}
        if self.kind == "cifar10":
            return {"kind": self.kind, "dir": self.dir, "per_class": self.per_class,
                    "test_per_class": self.test_per_class,
                    "subsample_seed": self.subsample_seed}
        return {"kind": self.kind, "classes": self.classes, "dims": self.dims,
                "per_class": self.per_class, "separation": self.separation,
                "seed": self.seed, "train_fraction": self.train_fraction}


def _strict(section: dict, where: str, required: dict, optional: dict) -> dict:
    """Pull typed values out of a config section, rejecting unknown keys."""
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object")
    out = {}
    seen = set()
    for key, conv in required.items():
        if key not in section:
            raise ConfigError(f"{where}: missing required key {key!r}")
        seen.add(key)
        out[key] = conv(section[key])
    for key, (conv, default) in optional.items():
        seen.add(key)
        out[key] = conv(section[key]) if key in section else default
    unknown = sorted(set(section) - seen)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    return out


def _int_tuple(v):
    return tuple(int(x) for x in v)


def _model_from_dict(d: dict) -> ModelSpec:
    kind = d.get("kind")
    if kind == KIND_MLP:
        vals = _strict(d, "model", {"kind": str, "input_shape": _int_tuple,
                                    "num_classes": int},
                       {"hidden": (_int_tuple, ()), "precision": (str, "f32")})
        return ModelSpec(**vals)
    if kind == KIND_RESNET_MINI:
        vals = _strict(d, "model", {"kind": str, "input_shape": _int_tuple,
                                    "num_classes": int},
                       {"stage_widths": (_int_tuple, DEFAULT_STAGE_WIDTHS),
                        "blocks_per_stage": (int, DEFAULT_BLOCKS_PER_STAGE),
                        "batch_norm": (bool, True),
                        "precision": (str, "f32")})
        return ModelSpec(**vals)
    raise ConfigError(f"model: unknown kind {kind!r}")


def _model_to_dict(spec: ModelSpec) -> dict:
    return json.loads(spec.canonical())


def _hp_from_dict(d: dict) -> Hyperparams:
    vals = _strict(d, "hyperparams", {"lr": float, "batch_size": int, "t_max": int},
                   {"momentum": (float, 0.0), "lr_milestones": (_int_tuple, ()),
                    "lr_decay": (float, 1.0), "weight_decay": (float, 0.0)})
    try:
        return Hyperparams(**vals)
    except ValueError as e:
        raise ConfigError(f"hyperparams: {e}") from e


def _dataset_from_dict(d: dict) -> DatasetConfig:
    kind = d.get("kind")
    if kind == "idx":
        vals = _strict(d, "dataset", {"kind": str, "train_images": str, "train_labels": str,
                                      "test_images": str, "test_labels": str}, {})
    elif kind == "cifar10":
        opt_int = lambda v: None if v is None else int(v)
        vals = _strict(d, "dataset", {"kind": str, "dir": str},
                       {"per_class": (opt_int, None), "test_per_class": (opt_int, None),
                        "subsample_seed": (int, 0)})
    elif kind == "blobs":
        vals = _strict(d, "dataset", {"kind": str, "classes": int, "dims": int,
                                      "per_class": int, "separation": float, "seed": int},
                       {"train_fraction": (float, 0.8)})
    else:
        raise ConfigError(f"dataset: unknown kind {kind!r} (expected one of {DATASET_KINDS})")
    return DatasetConfig(**vals)


@dataclass
class ExperimentConfig:
    name: str
    model: ModelSpec
    hyperparams: Hyperparams
    dataset: DatasetConfig
    seeds: tuple[int, ...] = (1, 2, 3)
    n_points: int = 100
    bn_mode: str = "interpolate"
    barrier_definition: str = "endpoint-max"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(self.seeds) < 1:
            raise ConfigError("need at least one replicate seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds in {self.seeds}")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative")
        if self.n_points < 2:
            raise ConfigError(f"n_points must be >= 2, got {self.n_points}")
        if self.bn_mode not in ("interpolate", "recalibrate"):
            raise ConfigError(f"unknown bn_mode {self.bn_mode!r}")
        if self.barrier_definition not in ("endpoint-max", "chord"):
            raise ConfigError(f"unknown barrier_definition {self.barrier_definition!r}")
        if not self.name or "/" in self.name:
            raise ConfigError(f"experiment name must be a nonempty path segment, got {self.name!r}")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "name": self.name,
            "model": _model_to_dict(self.model),
            "hyperparams": {
                "lr": self.hyperparams.lr,
                "momentum": self.hyperparams.momentum,
                "batch_size": self.hyperparams.batch_size,
                "t_max": self.hyperparams.t_max,
                "lr_milestones": list(self.hyperparams.lr_milestones),
                "lr_decay": self.hyperparams.lr_decay,
                "weight_decay": self.hyperparams.weight_decay,
            },
            "dataset": self.dataset.to_dict(),
            "seeds": list(self.seeds),
            "n_points": self.n_points,
            "bn_mode": self.bn_mode,
            "barrier_definition": self.barrier_definition,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        top = _strict(d, "config",
                      {"version": int, "name": str, "model": dict,
                       "hyperparams": dict, "dataset": dict},
                      {"seeds": (_int_tuple, (1, 2, 3)), "n_points": (int, 100),
                       "bn_mode": (str, "interpolate"),
                       "barrier_definition": (str, "endpoint-max")})
        if top["version"] != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {top['version']}")
        try:
            model = _model_from_dict(top["model"])
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"model: {e}") from e
        return ExperimentConfig(
            name=top["name"],
            model=model,
            hyperparams=_hp_from_dict(top["hyperparams"]),
            dataset=_dataset_from_dict(top["dataset"]),
            seeds=top["seeds"],
            n_points=top["n_points"],
            bn_mode=top["bn_mode"],
            barrier_definition=top["barrier_definition"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from e
        return ExperimentConfig.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
