"""Small residual network engine.

Architecture: 3x3 conv stem, then three stages of residual blocks
(conv-BN-ReLU-conv-BN plus an identity or strided 1x1-projection shortcut,
ReLU after the join), global average pooling, and a linear head. Stages two
and three halve the spatial resolution in their first block. With batch
norm disabled the convolutions carry biases instead.

Batch norm runs in one of three regimes:
  * inference - stored running statistics (optionally overridden),
  * training  - batch statistics, emitting EMA running-stat updates,
  * collection - exact per-channel moments of one layer's input, used by
    the staged recalibration pass in the interpolation module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linpath.errors import ShapeMismatchError
from linpath.nn import ops
from linpath.nn.params import (
    Manifest,
    ROLE_BIAS,
    ROLE_BN_GAIN,
    ROLE_BN_MEAN,
    ROLE_BN_SHIFT,
    ROLE_BN_VAR,
    ROLE_WEIGHT,
)
from linpath.nn.spec import ModelSpec


@dataclass(frozen=True)
class _Block:
    name: str
    in_c: int
    width: int
    stride: int
    proj: bool


class _StopWalk(Exception):
    """Raised by the collection regime once the target layer has been seen."""


class _MomentAccumulator:
    """Exact per-channel mean/variance over chunked data (f64 accumulation)."""

    def __init__(self, channels: int):
        self.sum = np.zeros(channels, dtype=np.float64)
        self.sumsq = np.zeros(channels, dtype=np.float64)
        self.count = 0

    def add(self, x: np.ndarray):
        axes = tuple(range(x.ndim - 1))
        x64 = x.astype(np.float64)
        self.sum += x64.sum(axis=axes)
        self.sumsq += (x64 * x64).sum(axis=axes)
        m = 1
        for a in axes:
            m *= x.shape[a]
        self.count += m

    def finalize(self, dtype):
        mean = self.sum / self.count
        var = np.maximum(self.sumsq / self.count - mean * mean, 0.0)
        return mean.astype(dtype), var.astype(dtype)


class ResNetEngine:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.bn = spec.batch_norm
        widths = spec.stage_widths
        blocks = []
        in_c = widths[0]
        for s, width in enumerate(widths, start=1):
            for b in range(1, spec.blocks_per_stage + 1):
                stride = 2 if (s > 1 and b == 1) else 1
                proj = stride != 1 or in_c != width
                blocks.append(_Block(f"stage{s}.block{b}", in_c, width, stride, proj))
                in_c = width
        self.blocks = blocks
        self.head_in = widths[-1]

        slots = []
        bn_names = []

        def add_conv(name, cin, cout, k):
            slots.append((f"{name}.weight", (k, k, cin, cout), ROLE_WEIGHT))
            if not self.bn:
                slots.append((f"{name}.bias", (cout,), ROLE_BIAS))

        def add_bn(name, c):
            if not self.bn:
                return
            slots.append((f"{name}.gain", (c,), ROLE_BN_GAIN))
            slots.append((f"{name}.shift", (c,), ROLE_BN_SHIFT))
            slots.append((f"{name}.running_mean", (c,), ROLE_BN_MEAN))
            slots.append((f"{name}.running_var", (c,), ROLE_BN_VAR))
            bn_names.append(name)

        add_conv("stem.conv", spec.input_shape[2], widths[0], 3)
        add_bn("stem.bn", widths[0])
        for blk in blocks:
            add_conv(f"{blk.name}.conv1", blk.in_c, blk.width, 3)
            add_bn(f"{blk.name}.bn1", blk.width)
            add_conv(f"{blk.name}.conv2", blk.width, blk.width, 3)
            add_bn(f"{blk.name}.bn2", blk.width)
            if blk.proj:
                add_conv(f"{blk.name}.shortcut", blk.in_c, blk.width, 1)
                add_bn(f"{blk.name}.shortcut_bn", blk.width)
        slots.append(("head.weight", (self.head_in, spec.num_classes), ROLE_WEIGHT))
        slots.append(("head.bias", (spec.num_classes,), ROLE_BIAS))

        self._manifest = Manifest.from_named(slots)
        self.bn_names = bn_names  # forward-call order

    def manifest(self) -> Manifest:
        return self._manifest

    def init_tensors(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """He-style conv/linear init; BN starts at identity with unit running var."""
        dtype = self.spec.dtype
        out = {}
        for slot in self._manifest:
            if slot.role == ROLE_WEIGHT:
                fan_in = slot.shape[0] if len(slot.shape) == 2 else (
                    slot.shape[0] * slot.shape[1] * slot.shape[2])
                std = np.sqrt(2.0 / fan_in)
                out[slot.name] = (rng.standard_normal(slot.shape) * std).astype(dtype)
            elif slot.role in (ROLE_BN_GAIN, ROLE_BN_VAR):
                out[slot.name] = np.ones(slot.shape, dtype=dtype)
            else:
                out[slot.name] = np.zeros(slot.shape, dtype=dtype)
        return out

    def prepare_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        shape = self.spec.input_shape
        if x.ndim == 2 and x.shape[1] == shape[0] * shape[1] * shape[2]:
            x = x.reshape(x.shape[0], *shape)
        if x.ndim != 4 or x.shape[1:] != shape:
            raise ShapeMismatchError(f"expected inputs shaped (N, {shape}), got {x.shape}")
        return x.astype(self.spec.dtype, copy=False)

    # -- forward walkers -------------------------------------------------

    def _conv(self, t, name, x, stride, pad):
        return ops.conv2d_forward(x, t[f"{name}.weight"], t.get(f"{name}.bias"),
                                  stride=stride, pad=pad)

    def _features(self, t, x, bn_apply):
        """Shared feature extractor; bn_apply(name, pre) -> normalized output."""
        pre, _ = self._conv(t, "stem.conv", x, 1, 1)
        z = bn_apply("stem.bn", pre) if self.bn else pre
        a = ops.relu(z)
        for blk in self.blocks:
            xin = a
            p1, _ = self._conv(t, f"{blk.name}.conv1", xin, blk.stride, 1)
            z1 = bn_apply(f"{blk.name}.bn1", p1) if self.bn else p1
            a1 = ops.relu(z1)
            p2, _ = self._conv(t, f"{blk.name}.conv2", a1, 1, 1)
            z2 = bn_apply(f"{blk.name}.bn2", p2) if self.bn else p2
            if blk.proj:
                ps, _ = self._conv(t, f"{blk.name}.shortcut", xin, blk.stride, 0)
                sc = bn_apply(f"{blk.name}.shortcut_bn", ps) if self.bn else ps
            else:
                sc = xin
            a = ops.relu(z2 + sc)
        return a

    def _bn_inference(self, t, name, x, override=None):
        if override is not None and name in override:
            mean, var = override[name]
        else:
            mean = t[f"{name}.running_mean"]
            var = t[f"{name}.running_var"]
        return ops.bn_forward_inference(x, t[f"{name}.gain"], t[f"{name}.shift"], mean, var)

    def forward_logits(self, t, x, train: bool = False, bn_override=None) -> np.ndarray:
        if train:
            raise ValueError("training-mode forward is provided by loss_and_grad")
        a = self._features(t, x, lambda name, v: self._bn_inference(t, name, v, bn_override))
        pooled = ops.global_avg_pool(a)
        return ops.linear_forward(pooled, t["head.weight"], t["head.bias"])

    def collect_bn_stats(self, t, chunks) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Exact activation statistics per BN layer, staged in forward order.

        Each stage re-runs the partial forward with every earlier layer locked
        to its freshly computed statistics, so the result equals a single
        whole-dataset inference pass with the returned statistics installed.
        """
        if not self.bn:
            return {}
        dtype = self.spec.dtype
        frozen: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for target in self.bn_names:
            acc = _MomentAccumulator(self._manifest[f"{target}.gain"].shape[0])

            def bn_apply(name, v, _target=target, _acc=acc):
                if name == _target:
                    _acc.add(v)
                    raise _StopWalk
                return self._bn_inference(t, name, v, frozen)

            for chunk in chunks:
                try:
                    self._features(t, chunk, bn_apply)
                except _StopWalk:
                    pass
            frozen[target] = acc.finalize(dtype)
        return frozen

    # -- training-mode forward/backward ----------------------------------

    def loss_and_grad(self, t, x, y):
        bn = self.bn
        ema: dict[str, np.ndarray] = {}
        bn_caches: dict[str, tuple] = {}

        def bn_train(name, v):
            out, cache, mu, _, var_u = ops.bn_forward_train(
                v, t[f"{name}.gain"], t[f"{name}.shift"])
            bn_caches[name] = cache
            nm, nv = ops.bn_running_update(
                t[f"{name}.running_mean"], t[f"{name}.running_var"], mu, var_u)
            ema[f"{name}.running_mean"] = nm
            ema[f"{name}.running_var"] = nv
            return out

        # Forward, caching pre-activations and im2col patches for backward.
        pre0, cols0 = self._conv(t, "stem.conv", x, 1, 1)
        z0 = bn_train("stem.bn", pre0) if bn else pre0
        a = ops.relu(z0)
        stem_cache = (x, cols0, pre0, z0)

        block_caches = []
        for blk in self.blocks:
            xin = a
            p1, cols1 = self._conv(t, f"{blk.name}.conv1", xin, blk.stride, 1)
            z1 = bn_train(f"{blk.name}.bn1", p1) if bn else p1
            a1 = ops.relu(z1)
            p2, cols2 = self._conv(t, f"{blk.name}.conv2", a1, 1, 1)
            z2 = bn_train(f"{blk.name}.bn2", p2) if bn else p2
            if blk.proj:
                ps, colss = self._conv(t, f"{blk.name}.shortcut", xin, blk.stride, 0)
                sc = bn_train(f"{blk.name}.shortcut_bn", ps) if bn else ps
            else:
                ps, colss, sc = None, None, xin
            s = z2 + sc
            a = ops.relu(s)
            block_caches.append((xin, cols1, z1, a1, cols2, colss, s))

        pooled = ops.global_avg_pool(a)
        logits = ops.linear_forward(pooled, t["head.weight"], t["head.bias"])
        loss = float(ops.cross_entropy_per_example(logits, y).astype(np.float64).mean())

        # Backward.
        grads: dict[str, np.ndarray] = {}

        def conv_back(name, dout, cols, x_shape, stride, pad):
            dx, dw, db = ops.conv2d_backward(dout, cols, t[f"{name}.weight"], x_shape,
                                             stride=stride, pad=pad, has_bias=not bn)
            grads[f"{name}.weight"] = dw
            if db is not None:
                grads[f"{name}.bias"] = db
            return dx

        def bn_back(name, dout):
            dx, dgain, dshift = ops.bn_backward_train(dout, bn_caches[name])
            grads[f"{name}.gain"] = dgain
            grads[f"{name}.shift"] = dshift
            return dx

        dlogits = ops.cross_entropy_grad(logits, y)
        dpooled, dw_head, db_head = ops.linear_backward(dlogits, pooled, t["head.weight"])
        grads["head.weight"] = dw_head
        grads["head.bias"] = db_head
        da = ops.global_avg_pool_backward(dpooled, a.shape)

        for blk, cache in zip(reversed(self.blocks), reversed(block_caches)):
            xin, cols1, z1, a1, cols2, colss, s = cache
            ds = ops.relu_backward(da, s)
            dz2, dsc = ds, ds
            dp2 = bn_back(f"{blk.name}.bn2", dz2) if bn else dz2
            da1 = conv_back(f"{blk.name}.conv2", dp2, cols2, a1.shape, 1, 1)
            dz1 = ops.relu_backward(da1, z1)
            dp1 = bn_back(f"{blk.name}.bn1", dz1) if bn else dz1
            dxin = conv_back(f"{blk.name}.conv1", dp1, cols1, xin.shape, blk.stride, 1)
            if blk.proj:
                dps = bn_back(f"{blk.name}.shortcut_bn", dsc) if bn else dsc
                dxin = dxin + conv_back(f"{blk.name}.shortcut", dps, colss, xin.shape,
                                        blk.stride, 0)
            else:
                dxin = dxin + dsc
            da = dxin

        x0, cols0, pre0, z0 = stem_cache
        dz0 = ops.relu_backward(da, z0)
        dp0 = bn_back("stem.bn", dz0) if bn else dz0
        conv_back("stem.conv", dp0, cols0, x0.shape, 1, 1)

        return loss, grads, ema
