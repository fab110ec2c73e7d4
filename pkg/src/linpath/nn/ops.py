"""Array-level primitives: linear, conv, batch norm, ReLU, softmax cross-entropy.

All operations preserve the dtype of their inputs and are deterministic for a
fixed environment. Convolutions use NHWC layout with HWIO kernels and are
computed by explicit patch extraction (im2col) plus one matmul.
"""

from __future__ import annotations

import numpy as np

from linpath.nn.spec import BN_EPSILON, BN_MOMENTUM


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, pre):
    return dout * (pre > 0)


def linear_forward(x, w, b=None):
    out = x @ w
    if b is not None:
        out = out + b
    return out


def linear_backward(dout, x, w, has_bias=True):
    dw = x.T @ dout
    db = dout.sum(axis=0) if has_bias else None
    dx = dout @ w.T
    return dx, dw, db


def log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_per_example(logits, labels):
    """Per-example cross-entropy in nats, shape (N,)."""
    logp = log_softmax(logits)
    return -logp[np.arange(logits.shape[0]), labels]


def cross_entropy_grad(logits, labels):
    """Gradient of mean cross-entropy w.r.t. logits: (softmax - onehot) / N."""
    n = logits.shape[0]
    d = softmax(logits)
    d[np.arange(n), labels] -= 1
    return d / n


def predictions(logits):
    """Predicted class per example; ties break to the lowest class index."""
    return np.argmax(logits, axis=1)


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Extract conv patches: (N,H,W,C) -> (N,Ho,Wo,kh,kw,C)."""
    n, h, w, c = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = x[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :]
    return cols


def col2im(dcols, x_shape, stride, pad):
    """Scatter-add patches back to the input gradient; inverse layout of im2col."""
    n, h, w, c = x_shape
    _, ho, wo, kh, kw, _ = dcols.shape
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :] += dcols[:, :, :, i, j, :]
    if pad:
        return dxp[:, pad:pad + h, pad:pad + w, :]
    return dxp


def conv2d_forward(x, w, b=None, stride=1, pad=0):
    """x (N,H,W,Cin) * w (kh,kw,Cin,Cout) -> (N,Ho,Wo,Cout); returns (out, cols)."""
    kh, kw, cin, cout = w.shape
    cols = im2col(x, kh, kw, stride, pad)
    n, ho, wo = cols.shape[:3]
    out = cols.reshape(n * ho * wo, kh * kw * cin) @ w.reshape(kh * kw * cin, cout)
    out = out.reshape(n, ho, wo, cout)
    if b is not None:
        out = out + b
    return out, cols


def conv2d_backward(dout, cols, w, x_shape, stride=1, pad=0, has_bias=True):
    kh, kw, cin, cout = w.shape
    n, ho, wo = dout.shape[:3]
    dflat = dout.reshape(n * ho * wo, cout)
    dw = (cols.reshape(n * ho * wo, kh * kw * cin).T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0) if has_bias else None
    dcols = (dflat @ w.reshape(kh * kw * cin, cout).T).reshape(n, ho, wo, kh, kw, cin)
    dx = col2im(dcols, x_shape, stride, pad)
    return dx, dw, db


def global_avg_pool(x):
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(dout, x_shape):
    n, h, w, c = x_shape
    scale = np.asarray(1.0 / (h * w), dtype=dout.dtype)
    return np.broadcast_to(dout[:, None, None, :] * scale, x_shape).copy()


def bn_forward_train(x, gain, shift, eps=BN_EPSILON):
    """Batch-norm with batch statistics; reduces over all axes but the last.

    Returns (out, cache, batch_mean, batch_var_biased, batch_var_unbiased).
    The unbiased variance is what feeds the running-statistic update.
    """
    axes = tuple(range(x.ndim - 1))
    m = 1
    for a in axes:
        m *= x.shape[a]
    mu = x.mean(axis=axes)
    var = x.var(axis=axes)
    ivstd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x - mu) * ivstd
    out = gain * xhat + shift
    cache = (xhat, ivstd, gain, m)
    var_unbiased = var * (m / (m - 1)) if m > 1 else var
    return out, cache, mu, var, var_unbiased


def bn_backward_train(dout, cache):
    xhat, ivstd, gain, m = cache
    axes = tuple(range(dout.ndim - 1))
    dgain = (dout * xhat).sum(axis=axes)
    dshift = dout.sum(axis=axes)
    dxhat = dout * gain
    # Compact form of the full batch-statistic backward pass.
    dx = (ivstd / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgain, dshift


def bn_forward_inference(x, gain, shift, running_mean, running_var, eps=BN_EPSILON):
    """Batch-norm with stored statistics.

    Running variance is clamped to >= eps before use: states produced by
    training are always nonnegative, but arbitrary interpolants or
    file-loaded states might not be.
    """
    var = np.maximum(running_var, np.asarray(eps, dtype=x.dtype))
    ivstd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    return gain * (x - running_mean) * ivstd + shift


def bn_running_update(old_mean, old_var, batch_mean, batch_var_unbiased, momentum=BN_MOMENTUM):
    keep = np.asarray(1.0 - momentum, dtype=old_mean.dtype)
    mom = np.asarray(momentum, dtype=old_mean.dtype)
    new_mean = keep * old_mean + mom * batch_mean
    new_var = keep * old_var + mom * batch_var_unbiased
    return new_mean, new_var
