"""Model construction, evaluation, and gradients over flat parameter vectors.

Evaluation re-partitions any incoming batch stream into fixed-size internal
chunks and accumulates per-example losses in float64 in stream order. The
result is therefore independent of how the caller batched the data: the same
examples always go through identical array shapes and an identical reduction
order, which BLAS alone does not guarantee across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from linpath.errors import ShapeMismatchError
from linpath.nn import ops
from linpath.nn.mlp import MlpEngine
from linpath.nn.params import ParamVector, STATISTIC_ROLES, flatten
from linpath.nn.resnet import ResNetEngine
from linpath.nn.spec import KIND_MLP, ModelSpec

EVAL_CHUNK = 256


@dataclass(frozen=True)
class EvalResult:
    """Mean cross-entropy (nats) and misclassification fraction over a dataset."""

    loss: float
    error: float
    count: int


@dataclass
class GradientResult:
    """Gradient of mean batch cross-entropy plus training-mode side products."""

    grad: ParamVector
    bn_updates: dict[str, np.ndarray]
    loss: float


@lru_cache(maxsize=None)
def engine_for(spec: ModelSpec):
    return MlpEngine(spec) if spec.kind == KIND_MLP else ResNetEngine(spec)


def model_manifest(spec: ModelSpec):
    return engine_for(spec).manifest()


def build_model(spec: ModelSpec, seed: int) -> ParamVector:
    """Deterministic initial state; bit-identical for identical (spec, seed)."""
    engine = engine_for(spec)
    rng = np.random.Generator(np.random.PCG64(seed))
    named = engine.init_tensors(rng)
    return flatten(named, engine.manifest(), dtype=spec.dtype)


def check_conforms(theta: ParamVector, spec: ModelSpec):
    engine = engine_for(spec)
    if theta.manifest != engine.manifest():
        raise ShapeMismatchError("parameter vector manifest does not match the model spec")
    if theta.dtype != spec.dtype:
        raise ShapeMismatchError(
            f"parameter dtype {theta.dtype} does not match spec precision {spec.precision}")


def _iter_pairs(data):
    """Yield (inputs, labels) arrays from a Dataset, a Batch, or a batch stream."""
    if hasattr(data, "inputs") and hasattr(data, "labels"):
        yield data.inputs, data.labels
        return
    if isinstance(data, tuple) and len(data) == 2:
        yield data
        return
    for item in data:
        if hasattr(item, "inputs"):
            yield item.inputs, item.labels
        else:
            yield item


def fixed_chunks(data, chunk_size):
    """Re-partition a batch stream into fixed-size chunks, preserving order."""
    buf_x, buf_y, buffered = [], [], 0
    for x, y in _iter_pairs(data):
        x = np.asarray(x)
        y = np.asarray(y)
        if len(y) == 0:
            continue
        buf_x.append(x)
        buf_y.append(y)
        buffered += len(y)
        if buffered >= chunk_size:
            xs = np.concatenate(buf_x) if len(buf_x) > 1 else buf_x[0]
            ys = np.concatenate(buf_y) if len(buf_y) > 1 else buf_y[0]
            pos = 0
            while buffered - pos >= chunk_size:
                yield xs[pos:pos + chunk_size], ys[pos:pos + chunk_size]
                pos += chunk_size
            buf_x, buf_y = [xs[pos:]], [ys[pos:]]
            buffered -= pos
    if buffered:
        xs = np.concatenate(buf_x) if len(buf_x) > 1 else buf_x[0]
        ys = np.concatenate(buf_y) if len(buf_y) > 1 else buf_y[0]
        yield xs, ys


def _check_labels(y, num_classes):
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")


def evaluate(theta: ParamVector, spec: ModelSpec, data) -> EvalResult:
    """Exact dataset-mean loss and error; pure function of (theta, data)."""
    check_conforms(theta, spec)
    engine = engine_for(spec)
    tensors = theta.tensors()
    loss_sum = 0.0
    err_count = 0
    n = 0
    for x, y in fixed_chunks(data, EVAL_CHUNK):
        x = engine.prepare_input(x)
        y = np.asarray(y, dtype=np.int64)
        _check_labels(y, spec.num_classes)
        logits = engine.forward_logits(tensors, x)
        loss_sum += float(ops.cross_entropy_per_example(logits, y).astype(np.float64).sum())
        err_count += int((ops.predictions(logits) != y).sum())
        n += len(y)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return EvalResult(loss=loss_sum / n, error=err_count / n, count=n)


def gradient(theta: ParamVector, spec: ModelSpec, batch) -> GradientResult:
    """Gradient of mean cross-entropy over one batch (training-mode forward).

    Running-statistic slots get zero gradient; their EMA-updated values are
    returned separately in `bn_updates`, keyed by slot name.
    """
    check_conforms(theta, spec)
    engine = engine_for(spec)
    x, y = next(_iter_pairs(batch))
    x = engine.prepare_input(x)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty batch")
    _check_labels(y, spec.num_classes)
    if spec.batch_norm and len(y) < 2:
        raise ValueError("batch norm needs at least 2 examples (degenerate variance)")
    loss, grads, bn_updates = engine.loss_and_grad(theta.tensors(), x, y)
    flat = np.zeros(theta.size, dtype=theta.dtype)
    for slot in theta.manifest:
        if slot.name in grads:
            flat[slot.offset:slot.end] = grads[slot.name].reshape(-1)
        elif slot.role not in STATISTIC_ROLES:
            raise ShapeMismatchError(f"missing gradient for {slot.name!r}")
    return GradientResult(grad=ParamVector(flat, theta.manifest),
                          bn_updates=bn_updates, loss=loss)
