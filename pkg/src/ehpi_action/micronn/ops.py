"""Forward/backward kernels for the layers the EHPI classifier needs.

Public functions take the usual channels-first (N, C, H, W) layout. The
``*_nhwc`` variants are what the network uses internally: keeping channels
last lets the 3x3 convolution become a single matrix product without extra
transposes.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BatchTooSmall, ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# -- convolution -------------------------------------------------------------

def conv2d_forward_nhwc(x, weight, bias):
    n, h, w, c = x.shape
    f = weight.shape[0]
    if weight.shape[1:] != (c, 3, 3):
        raise ShapeMismatch(f"weight {weight.shape} does not fit input channels {c}")
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * w, c * 9)
    wm = weight.reshape(f, c * 9)
    y = cols @ wm.T
    y += bias
    return y.reshape(n, h, w, f), (cols, weight, x.shape)


def conv2d_backward_nhwc(dy, cache, need_dx=True):
    cols, weight, xshape = cache
    n, h, w, c = xshape
    f = weight.shape[0]
    dym = dy.reshape(n * h * w, f)
    dw = (dym.T @ cols).reshape(weight.shape)
    db = dym.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dym @ weight.reshape(f, c * 9)).reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dy.dtype)
    for kh in range(3):
        for kw in range(3):
            dxp[:, kh:kh + h, kw:kw + w, :] += dcols[..., kh, kw]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def conv2d_forward(x, weight, bias):
    """3x3 cross-correlation, stride 1, zero padding 1. Returns (y, cache)."""
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) input, got {x.shape}")
    y, cache = conv2d_forward_nhwc(x.transpose(0, 2, 3, 1), weight, bias)
    return y.transpose(0, 3, 1, 2), cache


def conv2d_backward(dy, cache):
    """Gradients (dx, dweight, dbias) for :func:`conv2d_forward`."""
    dx, dw, db = conv2d_backward_nhwc(np.ascontiguousarray(dy.transpose(0, 2, 3, 1)), cache)
    return dx.transpose(0, 3, 1, 2), dw, db


# -- batch normalization -----------------------------------------------------

def batchnorm_forward_nhwc(x, gamma, beta, running_mean, running_var, train):
    """Normalize over every axis but the last. ``running_*`` are updated in
    place in train mode."""
    axes = tuple(range(x.ndim - 1))
    if train:
        count = x.size // x.shape[-1]
        if x.shape[0] < 2:
            raise BatchTooSmall("batch norm in train mode needs at least 2 samples")
        mean = x.mean(axis=axes)
        xc = x - mean
        var = (xc * xc).mean(axis=axes)
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * (count / (count - 1))
    else:
        xc = x - running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma, train)


def batchnorm_backward_nhwc(dy, cache):
    xhat, inv, gamma, train = cache
    axes = tuple(range(dy.ndim - 1))
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    if not train:
        # running statistics are constants here
        return dy * (gamma * inv), dgamma, dbeta
    m = dy.size // dy.shape[-1]
    dx = (gamma * inv / m) * (m * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


def batchnorm_forward(x, gamma, beta, state, mode="train"):
    """Per-channel batch norm on (N, C, H, W) or (N, C) input.

    ``state`` is a dict with ``running_mean`` and ``running_var`` arrays,
    updated in place when ``mode == "train"``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    xl = np.moveaxis(x, 1, -1)
    y, cache = batchnorm_forward_nhwc(
        xl, gamma, beta, state["running_mean"], state["running_var"], mode == "train"
    )
    return np.moveaxis(y, -1, 1), cache


def batchnorm_backward(dy, cache):
    dx, dgamma, dbeta = batchnorm_backward_nhwc(np.moveaxis(dy, 1, -1), cache)
    return np.moveaxis(dx, -1, 1), dgamma, dbeta


# -- elementwise, pooling, dense -----------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def maxpool2x2_forward_nhwc(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ShapeMismatch(f"cannot 2x2-pool spatial size {h}x{w}")
    win = (
        x[:, : 2 * ho, : 2 * wo, :]
        .reshape(n, ho, 2, wo, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, ho, wo, c, 4)
    )
    # argmax keeps the first maximum, which is where tied gradients go
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2x2_backward_nhwc(dy, cache):
    idx, xshape = cache
    n, h, w, c = xshape
    ho, wo = h // 2, w // 2
    win = np.zeros((n, ho, wo, c, 4), dtype=dy.dtype)
    np.put_along_axis(win, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[:, : 2 * ho, : 2 * wo, :] = (
        win.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    )
    return dx


def maxpool2x2_forward(x):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    y, cache = maxpool2x2_forward_nhwc(x.transpose(0, 2, 3, 1))
    return y.transpose(0, 3, 1, 2), cache


def maxpool2x2_backward(dy, cache):
    dx = maxpool2x2_backward_nhwc(np.ascontiguousarray(dy.transpose(0, 2, 3, 1)), cache)
    return dx.transpose(0, 3, 1, 2)


def global_avg_pool_forward(x):
    """(N, C, H, W) -> (N, C)."""
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dy, xshape):
    n, c, h, w = xshape
    return np.broadcast_to((dy / (h * w))[:, :, None, None], xshape).copy()


def linear_forward(x, weight, bias):
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} vs weight {weight.shape}")
    return x @ weight.T + bias, (x, weight)


def linear_backward(dy, cache):
    x, weight = cache
    return dy @ weight, dy.T @ x, dy.sum(axis=0)


# -- loss ------------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ShapeMismatch(f"labels {labels} do not index {c} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


# -- initialization ---------------------------------------------------------------

def xavier_init(shape, rng, dtype=np.float64):
    """Glorot-uniform tensor; for conv kernels the fan counts include the kernel area."""
    shape = tuple(shape)
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out = shape[0] * receptive
    fan_in = (shape[1] if len(shape) > 1 else shape[0]) * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
