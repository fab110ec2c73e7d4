"""linpath: deterministic training, checkpointing, and loss measurement along
linear paths in neural-network weight space."""

from linpath.analysis import (
    AggregateCurve,
    BarrierReport,
    BarrierValue,
    aggregate_replicates,
    barrier_height,
    barrier_report,
    monotonicity_violation,
    path_deviation,
)
from linpath.config import DatasetConfig, ExperimentConfig
from linpath.data import Batch, Dataset, as_batches, load_cifar10, load_idx, synthetic_blobs
from linpath.experiment import export, run_experiment
from linpath.interp import PathCurve, bn_recalibrate, evaluate_path, lerp
from linpath.nn import (
    EvalResult,
    ModelSpec,
    ParamVector,
    build_model,
    evaluate,
    flatten,
    gradient,
    mlp_spec,
    resnet_mini_spec,
    unflatten,
)
from linpath.store import load, save
from linpath.trainer import Checkpoint, Hyperparams, checkpoint_schedule, sgd_step, train

__version__ = "0.1.0"
