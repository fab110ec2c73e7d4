"""Fully-connected ReLU network engine.

Layers are plain affine maps with ReLU between them; `hidden=()` degenerates
to multinomial logistic regression, which several tests lean on because its
gradient has a closed form.
"""

from __future__ import annotations

import numpy as np

from linpath.errors import ShapeMismatchError
from linpath.nn import ops
from linpath.nn.params import Manifest, ROLE_BIAS, ROLE_WEIGHT
from linpath.nn.spec import ModelSpec


class MlpEngine:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.dims = [spec.input_size, *spec.hidden, spec.num_classes]
        slots = []
        for i in range(len(self.dims) - 1):
            fan_in, fan_out = self.dims[i], self.dims[i + 1]
            slots.append((f"fc{i + 1}.weight", (fan_in, fan_out), ROLE_WEIGHT))
            slots.append((f"fc{i + 1}.bias", (fan_out,), ROLE_BIAS))
        self._manifest = Manifest.from_named(slots)

    def manifest(self) -> Manifest:
        return self._manifest

    def init_tensors(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """He-style init: weight std sqrt(2/fan_in), biases zero."""
        dtype = self.spec.dtype
        out = {}
        for i in range(len(self.dims) - 1):
            fan_in, fan_out = self.dims[i], self.dims[i + 1]
            std = np.sqrt(2.0 / fan_in)
            w = rng.standard_normal((fan_in, fan_out)) * std
            out[f"fc{i + 1}.weight"] = w.astype(dtype)
            out[f"fc{i + 1}.bias"] = np.zeros(fan_out, dtype=dtype)
        return out

    def prepare_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ShapeMismatchError(
                f"expected inputs with {self.dims[0]} features, got shape {x.shape}")
        return x.astype(self.spec.dtype, copy=False)

    def forward_logits(self, t: dict[str, np.ndarray], x: np.ndarray,
                       train: bool = False) -> np.ndarray:
        h = x
        n_layers = len(self.dims) - 1
        for i in range(1, n_layers + 1):
            h = ops.linear_forward(h, t[f"fc{i}.weight"], t[f"fc{i}.bias"])
            if i < n_layers:
                h = ops.relu(h)
        return h

    def loss_and_grad(self, t, x, y):
        n_layers = len(self.dims) - 1
        acts = [x]  # post-activation inputs to each layer
        pres = []
        h = x
        for i in range(1, n_layers + 1):
            z = ops.linear_forward(h, t[f"fc{i}.weight"], t[f"fc{i}.bias"])
            pres.append(z)
            h = ops.relu(z) if i < n_layers else z
            if i < n_layers:
                acts.append(h)
        logits = h
        loss = float(ops.cross_entropy_per_example(logits, y).astype(np.float64).mean())
        grads = {}
        d = ops.cross_entropy_grad(logits, y)
        for i in range(n_layers, 0, -1):
            dx, dw, db = ops.linear_backward(d, acts[i - 1], t[f"fc{i}.weight"])
            grads[f"fc{i}.weight"] = dw
            grads[f"fc{i}.bias"] = db
            if i > 1:
                d = ops.relu_backward(dx, pres[i - 2])
        return loss, grads, {}
