"""Dense forward/backward kernels for the supported layer kinds.

Everything runs in float64. Each forward returns ``(out, cache)`` and each
backward consumes ``(cache, grad_out)`` and returns ``(grad_in, param_grads)``
where ``param_grads`` maps parameter name -> gradient array.

Convolution uses im2col + matmul; pooling uses per-offset slicing with a
fixed scan order so max-pool ties always break toward the first window
position (deterministic backward).
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


# ---------------------------------------------------------------- convolution

def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int):
    b, c, h, w = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    if padding:
        xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x
    else:
        xp = x
    cols = np.empty((b, c, kernel, kernel, ho, wo), dtype=x.dtype)
    for i in range(kernel):
        hi = i + stride * ho
        for j in range(kernel):
            wj = j + stride * wo
            cols[:, :, i, j, :, :] = xp[:, :, i:hi:stride, j:wj:stride]
    return cols.reshape(b, c * kernel * kernel, ho * wo), (ho, wo)


def _col2im(gcols: np.ndarray, x_shape, kernel: int, stride: int, padding: int,
            ho: int, wo: int):
    b, c, h, w = x_shape
    gcols = gcols.reshape(b, c, kernel, kernel, ho, wo)
    gxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    for i in range(kernel):
        hi = i + stride * ho
        for j in range(kernel):
            wj = j + stride * wo
            gxp[:, :, i:hi:stride, j:wj:stride] += gcols[:, :, i, j, :, :]
    if padding:
        return gxp[:, :, padding:padding + h, padding:padding + w]
    return gxp


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    """x: (B, Cin, H, W); weight: (Cout, Cin, p, p); bias: (Cout,)."""
    cout, cin, p, _ = weight.shape
    cols, (ho, wo) = _im2col(x, p, stride, padding)
    wmat = weight.reshape(cout, cin * p * p)
    out = np.einsum("of,bfn->bon", wmat, cols, optimize=True)
    out += bias[None, :, None]
    out = out.reshape(x.shape[0], cout, ho, wo)
    cache = (x.shape, cols, weight, stride, padding, ho, wo)
    return out, cache


def conv2d_backward(cache, gout):
    x_shape, cols, weight, stride, padding, ho, wo = cache
    b = x_shape[0]
    cout, cin, p, _ = weight.shape
    gmat = gout.reshape(b, cout, ho * wo)
    gw = np.einsum("bon,bfn->of", gmat, cols, optimize=True).reshape(weight.shape)
    gb = gout.sum(axis=(0, 2, 3))
    wmat = weight.reshape(cout, cin * p * p)
    gcols = np.einsum("of,bon->bfn", wmat, gmat, optimize=True)
    gx = _col2im(gcols, x_shape, p, stride, padding, ho, wo)
    return gx, {"w": gw, "b": gb}


# --------------------------------------------------------------------- linear

def linear_forward(x, weight, bias):
    """x: (B, F); weight: (O, F); bias: (O,)."""
    out = x @ weight.T + bias
    return out, (x, weight)


def linear_backward(cache, gout):
    x, weight = cache
    gw = gout.T @ x
    gb = gout.sum(axis=0)
    gx = gout @ weight
    return gx, {"w": gw, "b": gb}


# ----------------------------------------------------------------- activation

def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, (x > 0)


def relu_backward(cache, gout):
    return gout * cache, {}


# -------------------------------------------------------------------- pooling

def _pool_geometry(x, kernel, stride):
    b, c, h, w = x.shape
    if kernel == 0:  # global pooling
        kernel, stride = h, h
    s = stride if stride else kernel
    ho = (h - kernel) // s + 1
    wo = (w - kernel) // s + 1
    return kernel, s, ho, wo


def maxpool_forward(x, kernel, stride=0):
    k, s, ho, wo = _pool_geometry(x, kernel, stride)
    b, c = x.shape[:2]
    best = np.full((b, c, ho, wo), -np.inf, dtype=x.dtype)
    arg_i = np.zeros((b, c, ho, wo), dtype=np.int8)
    arg_j = np.zeros((b, c, ho, wo), dtype=np.int8)
    for i in range(k):
        for j in range(k):
            patch = x[:, :, i:i + s * ho:s, j:j + s * wo:s]
            better = patch > best  # strict: ties keep the first (i, j) seen
            best = np.where(better, patch, best)
            arg_i = np.where(better, np.int8(i), arg_i)
            arg_j = np.where(better, np.int8(j), arg_j)
    return best, (x.shape, k, s, ho, wo, arg_i, arg_j)


def maxpool_backward(cache, gout):
    x_shape, k, s, ho, wo, arg_i, arg_j = cache
    gx = np.zeros(x_shape, dtype=gout.dtype)
    for i in range(k):
        for j in range(k):
            sel = (arg_i == i) & (arg_j == j)
            gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += gout * sel
    return gx, {}


def avgpool_forward(x, kernel, stride=0):
    k, s, ho, wo = _pool_geometry(x, kernel, stride)
    b, c = x.shape[:2]
    acc = np.zeros((b, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            acc += x[:, :, i:i + s * ho:s, j:j + s * wo:s]
    out = acc / (k * k)
    return out, (x.shape, k, s, ho, wo)


def avgpool_backward(cache, gout):
    x_shape, k, s, ho, wo = cache
    gx = np.zeros(x_shape, dtype=gout.dtype)
    share = gout / (k * k)
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += share
    return gx, {}


# -------------------------------------------------------------------- flatten

def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(cache, gout):
    return gout.reshape(cache), {}


# --------------------------------------------------------------- residual add

def add_forward(x, skip):
    return x + skip, None


def add_backward(cache, gout):
    return gout, gout  # main, skip


# ----------------------------------------------------------------- batch norm

def _bn_axes(x):
    return (0, 2, 3) if x.ndim == 4 else (0,)


def _bn_bcast(v, x):
    return v[None, :, None, None] if x.ndim == 4 else v[None, :]


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      momentum=0.1):
    """Per-channel normalization. Running stats are updated in place when
    training; evaluation normalizes with the stored running stats."""
    axes = _bn_axes(x)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - _bn_bcast(mean, x)) * _bn_bcast(inv_std, x)
    out = _bn_bcast(gamma, x) * xhat + _bn_bcast(beta, x)
    return out, (xhat, gamma, inv_std, training, x.shape)


def batchnorm_backward(cache, gout):
    xhat, gamma, inv_std, training, x_shape = cache
    axes = _bn_axes(gout)
    n = 1
    for a in axes:
        n *= x_shape[a]
    ggamma = (gout * xhat).sum(axis=axes)
    gbeta = gout.sum(axis=axes)
    gxhat = gout * _bn_bcast(gamma, gout)
    if training:
        # batch statistics are a function of x: full backward
        gx = (
            gxhat
            - _bn_bcast(gxhat.sum(axis=axes) / n, gout)
            - xhat * _bn_bcast((gxhat * xhat).sum(axis=axes) / n, gout)
        ) * _bn_bcast(inv_std, gout)
    else:
        gx = gxhat * _bn_bcast(inv_std, gout)
    return gx, {"gamma": ggamma, "beta": gbeta}
