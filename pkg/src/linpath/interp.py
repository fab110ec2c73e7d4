"""Linear interpolation between network states and loss/error along the path.

The alpha grid is endpoint-inclusive: alpha_i = i/(n-1), computed by exact
division so each grid value is correctly rounded. Path points use the
complementary weights (n-1-i)/(n-1) and i/(n-1) rather than 1-alpha, which
makes a reversed path bit-identical to interpolating in the other direction.

Two batch-norm treatments are offered. "interpolate" (default) treats
running statistics as part of the state and interpolates them like every
other entry; "recalibrate" replaces them at each path point with exact
activation statistics measured over calibration data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from linpath.errors import ShapeMismatchError
from linpath.nn.engine import (
    EVAL_CHUNK,
    EvalResult,
    check_conforms,
    engine_for,
    evaluate,
    fixed_chunks,
)
from linpath.nn.params import ParamVector
from linpath.trainer import Checkpoint

BN_MODES = ("interpolate", "recalibrate")


@dataclass
class PathCurve:
    """Loss/error sampled along one interpolation path."""

    alphas: np.ndarray
    losses: np.ndarray
    errors: np.ndarray
    t_from: int
    t_to: int
    seed: int
    bn_mode: str
    spec_hash: str = ""
    n_examples: int = 0

    def __len__(self):
        return len(self.alphas)


def alpha_grid(n_points: int) -> np.ndarray:
    if n_points < 2:
        raise ValueError(f"need at least 2 path points, got {n_points}")
    return np.arange(n_points, dtype=np.float64) / (n_points - 1)


def lerp(theta_a: ParamVector, theta_b: ParamVector, alpha: float,
         weight_a: float | None = None) -> ParamVector:
    """(1-alpha) * theta_a + alpha * theta_b over the full state.

    alpha=0 and alpha=1 return exact copies of the endpoints rather than
    going through arithmetic. `weight_a` overrides the default 1-alpha
    when the caller can supply an exactly complementary weight.
    """
    if not theta_a.same_layout(theta_b):
        raise ShapeMismatchError("interpolation endpoints have different manifests or dtypes")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be within [0, 1], got {alpha}")
    if alpha == 0.0:
        return theta_a.copy()
    if alpha == 1.0:
        return theta_b.copy()
    if np.array_equal(theta_a.values, theta_b.values):
        return theta_a.copy()  # degenerate identity, exact at every alpha
    dt = theta_a.dtype.type
    wa = dt(1.0 - alpha if weight_a is None else weight_a)
    wb = dt(alpha)
    return ParamVector(wa * theta_a.values + wb * theta_b.values, theta_a.manifest)


def path_states(theta_a: ParamVector, theta_b: ParamVector, n_points: int):
    """Yield (alpha, state) along the endpoint-inclusive uniform grid."""
    alphas = alpha_grid(n_points)
    d = n_points - 1
    for i in range(n_points):
        yield alphas[i], lerp(theta_a, theta_b, alphas[i], weight_a=(d - i) / d)


def evaluate_path_values(theta_a: ParamVector, theta_b: ParamVector, n_points: int,
                         eval_fn) -> tuple[np.ndarray, list[EvalResult]]:
    """Instrument core: run any evaluator over the interpolation grid."""
    alphas = alpha_grid(n_points)
    results = [eval_fn(theta) for _, theta in path_states(theta_a, theta_b, n_points)]
    return alphas, results


def bn_recalibrate(theta: ParamVector, spec, calibration_data) -> ParamVector:
    """Replace BN running statistics with exact moments over calibration data.

    All other entries are untouched. For models without batch norm this is a
    warned no-op returning theta unchanged.
    """
    check_conforms(theta, spec)
    engine = engine_for(spec)
    if not getattr(spec, "batch_norm", False):
        warnings.warn("model has no batch-norm layers; recalibration is a no-op")
        return theta
    chunks = [engine.prepare_input(x) for x, _ in fixed_chunks(calibration_data, EVAL_CHUNK)]
    if not chunks:
        raise ValueError("calibration data is empty")
    stats = engine.collect_bn_stats(theta.tensors(), chunks)
    out = theta.copy()
    for name, (mean, var) in stats.items():
        out.view(f"{name}.running_mean")[...] = mean
        out.view(f"{name}.running_var")[...] = var
    return out


def evaluate_path(ckpt_from: Checkpoint, ckpt_to: Checkpoint, dataset,
                  n_points: int = 100, bn_mode: str = "interpolate",
                  calibration_data=None) -> PathCurve:
    """Loss and error at n_points evenly spaced states between two checkpoints.

    Endpoints evaluate bit-identically to standalone evaluation of the
    checkpoints (under the default bn_mode). With bn_mode="recalibrate"
    every path point, endpoints included, gets freshly measured BN
    statistics (from `calibration_data`, defaulting to the evaluation set).
    """
    if bn_mode not in BN_MODES:
        raise ValueError(f"bn_mode must be one of {BN_MODES}, got {bn_mode!r}")
    spec = ckpt_from.spec
    if spec.spec_hash() != ckpt_to.spec.spec_hash():
        raise ValueError("endpoint checkpoints come from different model specs")
    if ckpt_from.seed != ckpt_to.seed:
        raise ValueError("endpoint checkpoints come from different replicates")
    if bn_mode == "recalibrate" and not spec.batch_norm:
        warnings.warn("model has no batch-norm layers; using plain interpolation")
        bn_mode = "interpolate"

    calib = calibration_data if calibration_data is not None else dataset

    def eval_fn(theta: ParamVector) -> EvalResult:
        if bn_mode == "recalibrate":
            theta = bn_recalibrate(theta, spec, calib)
        return evaluate(theta, spec, dataset)

    alphas, results = evaluate_path_values(ckpt_from.params, ckpt_to.params,
                                           n_points, eval_fn)
    return PathCurve(
        alphas=alphas,
        losses=np.array([r.loss for r in results], dtype=np.float64),
        errors=np.array([r.error for r in results], dtype=np.float64),
        t_from=ckpt_from.iteration,
        t_to=ckpt_to.iteration,
        seed=ckpt_from.seed,
        bn_mode=bn_mode,
        spec_hash=spec.spec_hash(),
        n_examples=results[0].count,
    )
