"""Deterministic SGD-with-momentum training that emits scheduled checkpoints.

Checkpoint iterations follow {0} union {2^k : 0 <= k <= 10} union
{1000k : k >= 2}, truncated to t_max, with t_max always appended so the
final state exists as a checkpoint. The checkpoint at iteration t is the
state after exactly t update steps; t=0 is the untouched initialization.

The update at step index t uses lr(t), i.e. the learning rate in effect for
the transition from state t to state t+1; a milestone at m therefore decays
every update from step m onward.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from linpath.errors import TrainingDivergedError
from linpath.nn.engine import build_model, gradient
from linpath.nn.params import DECAYED_ROLES, ParamVector
from linpath.nn.spec import ModelSpec

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    lr: float
    momentum: float = 0.0
    batch_size: int = 1
    t_max: int = 1
    lr_milestones: tuple[int, ...] = ()
    lr_decay: float = 1.0
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.t_max < 1:
            raise ValueError(f"total iterations must be >= 1, got {self.t_max}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.t_max for m in ms) \
                or any(m < 1 for m in ms):
            raise ValueError(f"milestones must be strictly increasing and in [1, t_max), got {ms}")
        if self.lr_decay <= 0:
            raise ValueError(f"decay factor must be > 0, got {self.lr_decay}")


@dataclass
class Checkpoint:
    iteration: int
    seed: int
    params: ParamVector
    spec: ModelSpec
    meta: dict = field(default_factory=dict)


def checkpoint_schedule(t_max: int) -> list[int]:
    """Scheduled snapshot iterations up to and including t_max."""
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    s = {0, t_max}
    s.update(2 ** k for k in range(0, 11))
    s.update(1000 * k for k in range(2, t_max // 1000 + 1))
    return sorted(t for t in s if t <= t_max)


def lr_at(hp: Hyperparams, t: int) -> float:
    """Learning rate applied to the update at step index t."""
    return hp.lr * hp.lr_decay ** bisect_right(hp.lr_milestones, t)


@lru_cache(maxsize=32)
def _decay_mask(manifest):
    mask = np.zeros(manifest.total_size, dtype=bool)
    for slot in manifest:
        if slot.role in DECAYED_ROLES:
            mask[slot.offset:slot.end] = True
    return mask


def sgd_step(theta: ParamVector, velocity: np.ndarray, grad: ParamVector,
             hp: Hyperparams, t: int, bn_updates: dict | None = None):
    """One momentum-SGD update; returns (new_theta, new_velocity).

    Weight decay touches weight/bias roles only. BN running-statistic slots
    carry zero gradient and are overwritten from `bn_updates` afterwards.
    """
    dtype = theta.dtype
    v = np.asarray(dtype.type(hp.momentum)) * velocity + grad.values
    if hp.weight_decay:
        v = v + dtype.type(hp.weight_decay) * np.where(_decay_mask(theta.manifest),
                                                       theta.values, dtype.type(0.0))
    new_values = theta.values - dtype.type(lr_at(hp, t)) * v
    new_theta = ParamVector(new_values, theta.manifest)
    if bn_updates:
        for name, value in bn_updates.items():
            new_theta.view(name)[...] = value
    return new_theta, v


def train(spec: ModelSpec, hp: Hyperparams, dataset, seed: int):
    """Yield a Checkpoint at every scheduled iteration of a deterministic run.

    Per-epoch example order is the permutation seeded by (seed XOR epoch).
    Raises TrainingDivergedError, naming the iteration, if the batch loss
    stops being finite.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    meta = {"schema_version": CHECKPOINT_SCHEMA_VERSION, "precision": spec.precision}
    theta = build_model(spec, seed)
    yield Checkpoint(iteration=0, seed=seed, params=theta.copy(), spec=spec, meta=meta)

    emit_at = set(checkpoint_schedule(hp.t_max))
    velocity = np.zeros(theta.size, dtype=theta.dtype)
    order = None
    pos = n
    epoch = -1
    for t in range(hp.t_max):
        if pos >= n:
            epoch += 1
            order = np.random.Generator(np.random.PCG64(seed ^ epoch)).permutation(n)
            pos = 0
        idx = order[pos:pos + hp.batch_size]
        pos += hp.batch_size
        result = gradient(theta, spec, (dataset.inputs[idx], dataset.labels[idx]))
        if not np.isfinite(result.loss):
            raise TrainingDivergedError(
                f"loss became non-finite ({result.loss}) at iteration {t}")
        theta, velocity = sgd_step(theta, velocity, result.grad, hp, t, result.bn_updates)
        if (t + 1) in emit_at:
            yield Checkpoint(iteration=t + 1, seed=seed, params=theta.copy(),
                             spec=spec, meta=meta)
