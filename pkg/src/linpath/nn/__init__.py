from linpath.nn.engine import (
    EvalResult,
    GradientResult,
    build_model,
    engine_for,
    evaluate,
    gradient,
    model_manifest,
)
from linpath.nn.params import Manifest, ParamVector, TensorSlot, flatten, unflatten
from linpath.nn.spec import ModelSpec, mlp_spec, resnet_mini_spec

__all__ = [
    "EvalResult",
    "GradientResult",
    "Manifest",
    "ModelSpec",
    "ParamVector",
    "TensorSlot",
    "build_model",
    "engine_for",
    "evaluate",
    "flatten",
    "gradient",
    "mlp_spec",
    "model_manifest",
    "resnet_mini_spec",
    "unflatten",
]
