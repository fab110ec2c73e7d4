"""Model specifications.

A ModelSpec pins everything needed to rebuild a network deterministically:
architecture kind, layer sizes, input shape, class count, batch-norm flag,
and the numeric precision used for parameters and activations. Its canonical
string (compact JSON with sorted keys) is what checkpoints embed, and its
hash is what run manifests reference.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from linpath.errors import SpecError

KIND_MLP = "mlp"
KIND_RESNET_MINI = "resnet-mini"

PRECISIONS = ("f32", "f64")

# Defaults for the residual network: 3x3 conv stem, then three stages of
# two residual blocks at widths 8/16/32, global average pool, linear head.
DEFAULT_STAGE_WIDTHS = (8, 16, 32)
DEFAULT_BLOCKS_PER_STAGE = 2

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1  # new_running = (1 - momentum) * old + momentum * batch


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; immutable and hashable."""

    kind: str
    input_shape: tuple[int, ...]
    num_classes: int
    hidden: tuple[int, ...] = ()
    stage_widths: tuple[int, ...] = DEFAULT_STAGE_WIDTHS
    blocks_per_stage: int = DEFAULT_BLOCKS_PER_STAGE
    batch_norm: bool = False
    precision: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        self._validate()

    def _validate(self):
        if self.kind not in (KIND_MLP, KIND_RESNET_MINI):
            raise SpecError(f"unknown architecture kind: {self.kind!r}")
        if self.precision not in PRECISIONS:
            raise SpecError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.num_classes < 2:
            raise SpecError(f"class count must be >= 2, got {self.num_classes}")
        if not self.input_shape or any(d < 1 for d in self.input_shape):
            raise SpecError(f"invalid input shape {self.input_shape}")
        if self.kind == KIND_MLP:
            if len(self.input_shape) not in (1, 3):
                raise SpecError("mlp input shape must be (D,) or (H, W, C)")
            if any(w < 1 for w in self.hidden):
                raise SpecError(f"all hidden widths must be >= 1, got {self.hidden}")
            if self.batch_norm:
                raise SpecError("batch norm is only available for resnet-mini")
        else:
            if len(self.input_shape) != 3:
                raise SpecError("resnet-mini input shape must be (H, W, C)")
            if len(self.stage_widths) != 3 or any(w < 1 for w in self.stage_widths):
                raise SpecError(f"resnet-mini needs three stage widths >= 1, got {self.stage_widths}")
            if self.blocks_per_stage < 1:
                raise SpecError(f"blocks per stage must be >= 1, got {self.blocks_per_stage}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self.precision == "f32" else np.float64)

    @property
    def input_size(self) -> int:
        n = 1
        for d in self.input_shape:
            n *= d
        return n

    def canonical(self) -> str:
        """Canonical string form; stable across runs and processes."""
        d = {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "precision": self.precision,
        }
        if self.kind == KIND_MLP:
            d["hidden"] = list(self.hidden)
        else:
            d["stage_widths"] = list(self.stage_widths)
            d["blocks_per_stage"] = self.blocks_per_stage
            d["batch_norm"] = self.batch_norm
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def label(self) -> str:
        """Short human-readable tag used in CSV output."""
        if self.kind == KIND_MLP:
            widths = "-".join(str(w) for w in self.hidden) or "linear"
            return f"mlp-{widths}"
        widths = "-".join(str(w) for w in self.stage_widths)
        return f"resnet-mini-{widths}" + ("-bn" if self.batch_norm else "")

    @staticmethod
    def from_canonical(text: str) -> "ModelSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise SpecError(f"unparseable model spec string: {e}") from e
        if not isinstance(d, dict) or "kind" not in d:
            raise SpecError("model spec string is not a spec object")
        kind = d.get("kind")
        common = dict(
            kind=kind,
            input_shape=tuple(d.get("input_shape", ())),
            num_classes=d.get("num_classes", 0),
            precision=d.get("precision", "f32"),
        )
        if kind == KIND_MLP:
            return ModelSpec(hidden=tuple(d.get("hidden", ())), **common)
        return ModelSpec(
            stage_widths=tuple(d.get("stage_widths", DEFAULT_STAGE_WIDTHS)),
            blocks_per_stage=d.get("blocks_per_stage", DEFAULT_BLOCKS_PER_STAGE),
            batch_norm=bool(d.get("batch_norm", False)),
            **common,
        )


def mlp_spec(hidden=(300, 100), input_shape=(784,), num_classes=10, precision="f32") -> ModelSpec:
    return ModelSpec(kind=KIND_MLP, input_shape=tuple(input_shape),
                     num_classes=num_classes, hidden=tuple(hidden), precision=precision)


def resnet_mini_spec(input_shape=(32, 32, 3), num_classes=10, batch_norm=True,
                     stage_widths=DEFAULT_STAGE_WIDTHS,
                     blocks_per_stage=DEFAULT_BLOCKS_PER_STAGE, precision="f32") -> ModelSpec:
    return ModelSpec(kind=KIND_RESNET_MINI, input_shape=tuple(input_shape),
                     num_classes=num_classes, stage_widths=tuple(stage_widths),
                     blocks_per_stage=blocks_per_stage, batch_norm=batch_norm,
                     precision=precision)
