"""Scalar summaries of interpolation paths.

Barrier height comes in two definitions, always tagged in the output:

  endpoint-max (default): max(0, peak - max(endpoint values)). Zero exactly
      when the path never rises above either endpoint.
  chord: max(0, max_i (v_i - ((1-a_i) v_0 + a_i v_last))), the largest rise
      above the straight line between the endpoint values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linpath.errors import DegenerateDirectionError
from linpath.interp import PathCurve
from linpath.trainer import Checkpoint

BARRIER_DEFINITIONS = ("endpoint-max", "chord")


def _pop_std(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Population standard deviation, exact zero for identical replicates.

    Shifting by the first replicate is a mathematical no-op for std but keeps
    identical inputs at exactly zero instead of mean-rounding noise.
    """
    shifted = a - np.take(a, [0], axis=axis)
    return shifted.std(axis=axis)


@dataclass(frozen=True)
class BarrierValue:
    """Barrier heights of one curve: loss in nats, error as a fraction."""

    loss: float
    error: float
    definition: str


@dataclass
class BarrierReport:
    """Per-(t, seed) barriers plus per-t mean/std over replicates."""

    per_curve: list[tuple[int, int, BarrierValue]]  # (t_from, seed, value)
    per_t: dict[int, dict[str, float]]
    definition: str
    replicates: int


@dataclass
class AggregateCurve:
    alphas: np.ndarray
    loss_mean: np.ndarray
    loss_std: np.ndarray
    error_mean: np.ndarray
    error_std: np.ndarray
    replicates: int


def _barrier(values: np.ndarray, alphas: np.ndarray, definition: str) -> float:
    values = np.asarray(values, dtype=np.float64)
    if definition == "endpoint-max":
        baseline = max(values[0], values[-1])
        return float(max(0.0, values.max() - baseline))
    if definition == "chord":
        chord = (1.0 - alphas) * values[0] + alphas * values[-1]
        return float(max(0.0, (values - chord).max()))
    raise ValueError(f"unknown barrier definition {definition!r}")


def barrier_height(curve: PathCurve, definition: str = "endpoint-max") -> BarrierValue:
    """Maximum increase in loss and error along the path, clamped at zero."""
    return BarrierValue(
        loss=_barrier(curve.losses, curve.alphas, definition),
        error=_barrier(curve.errors, curve.alphas, definition),
        definition=definition,
    )


def monotonicity_violation(curve: PathCurve) -> float:
    """Largest single-step rise in loss between consecutive sampled points.

    Zero iff the sampled loss curve is monotonically non-increasing
    (plateaus do not count as violations).
    """
    steps = np.diff(np.asarray(curve.losses, dtype=np.float64))
    return float(max(0.0, steps.max())) if len(steps) else 0.0


def aggregate_replicates(curves: list[PathCurve]) -> AggregateCurve:
    """Per-alpha mean and population standard deviation over replicates."""
    if not curves:
        raise ValueError("need at least one curve")
    first = curves[0]
    for c in curves[1:]:
        if not np.array_equal(c.alphas, first.alphas):
            raise ValueError("replicate curves have different alpha grids")
        if (c.t_from, c.t_to, c.bn_mode, c.spec_hash) != (
                first.t_from, first.t_to, first.bn_mode, first.spec_hash):
            raise ValueError("replicate curves describe different paths")
    losses = np.stack([np.asarray(c.losses, dtype=np.float64) for c in curves])
    errors = np.stack([np.asarray(c.errors, dtype=np.float64) for c in curves])
    return AggregateCurve(
        alphas=first.alphas.copy(),
        loss_mean=losses.mean(axis=0),
        loss_std=_pop_std(losses),  # population std: divide by n
        error_mean=errors.mean(axis=0),
        error_std=_pop_std(errors),
        replicates=len(curves),
    )


def barrier_report(curves: list[PathCurve], definition: str = "endpoint-max") -> BarrierReport:
    """Barriers for a batch of curves, aggregated per source iteration."""
    per_curve = []
    by_t: dict[int, list[BarrierValue]] = {}
    for c in curves:
        value = barrier_height(c, definition)
        per_curve.append((c.t_from, c.seed, value))
        by_t.setdefault(c.t_from, []).append(value)
    per_t = {}
    for t, values in sorted(by_t.items()):
        loss = np.array([v.loss for v in values], dtype=np.float64)
        err = np.array([v.error for v in values], dtype=np.float64)
        per_t[t] = {
            "loss_barrier_mean": float(loss.mean()),
            "loss_barrier_std": float(_pop_std(loss)),
            "error_barrier_mean": float(err.mean()),
            "error_barrier_std": float(_pop_std(err)),
            "count": len(values),
        }
    replicates = max((len(v) for v in by_t.values()), default=0)
    return BarrierReport(per_curve=per_curve, per_t=per_t,
                         definition=definition, replicates=replicates)


@dataclass(frozen=True)
class DeviationPoint:
    iteration: int
    distance: float
    coordinate: float


def path_deviation(trajectory: list[Checkpoint], start: Checkpoint,
                   end: Checkpoint) -> list[DeviationPoint]:
    """Distance from each trajectory state to the start-end line.

    Also reports the projection coordinate along the line (0 at start,
    1 at end). Computed in float64 regardless of model precision.
    """
    d = end.params.values.astype(np.float64) - start.params.values.astype(np.float64)
    norm = np.linalg.norm(d)
    if norm == 0.0:
        raise DegenerateDirectionError("start and end states are identical")
    dhat = d / norm
    out = []
    for ckpt in trajectory:
        if np.array_equal(ckpt.params.values, start.params.values):
            out.append(DeviationPoint(iteration=ckpt.iteration, distance=0.0,
                                      coordinate=0.0))
            continue
        if np.array_equal(ckpt.params.values, end.params.values):
            out.append(DeviationPoint(iteration=ckpt.iteration, distance=0.0,
                                      coordinate=1.0))
            continue
        r = ckpt.params.values.astype(np.float64) - start.params.values.astype(np.float64)
        proj = float(r @ dhat)
        dist = float(np.linalg.norm(r - proj * dhat))
        out.append(DeviationPoint(iteration=ckpt.iteration, distance=dist,
                                  coordinate=proj / norm))
    return out
