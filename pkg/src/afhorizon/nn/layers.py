"""1-D network primitives: forward passes with caches, exact backward passes.

Convolutions use 'same' padding with output length ceil(L / stride) and are
evaluated as im2col matrix products; their input gradient is the matching
transposed convolution (dilate-by-stride, correlate with the flipped kernel),
so both directions run as BLAS calls.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(B, C, L) -> im2col matrix (B, L_out, C * kernel)."""
    win = sliding_window_view(x, kernel, axis=2)[:, :, ::stride, :]
    b, c, lo, k = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, lo, c * k)


def conv1d_forward(x, w, b, stride=1):
    """x (B,C,L), w (F,C,K), b (F,) or None -> (y (B,F,Lo), cache).

    Convolutions feeding a batch norm take ``b=None``: the normalization
    subtracts per-channel means, so a bias there would be a dead parameter.
    """
    batch, c_in, length = x.shape
    f_out, _, kernel = w.shape
    l_out = -(-length // stride)
    pad_total = max((l_out - 1) * stride + kernel - length, 0)
    left = pad_total // 2
    xp = np.pad(x, ((0, 0), (0, 0), (left, pad_total - left)))
    cols = _windows(xp, kernel, stride)[:, :l_out, :]
    y = np.matmul(cols, w.reshape(f_out, -1).T)
    if b is not None:
        y += b
    cache = (cols, x.shape, w, stride, left, xp.shape[2], b is not None)
    return np.ascontiguousarray(y.transpose(0, 2, 1)), cache


def conv1d_backward(dy, cache):
    cols, x_shape, w, stride, left, l_padded, has_bias = cache
    batch, c_in, length = x_shape
    f_out, _, kernel = w.shape
    l_out = dy.shape[2]
    dyt = np.ascontiguousarray(dy.transpose(0, 2, 1))  # (B, Lo, F)
    db = dy.sum(axis=(0, 2)) if has_bias else None
    dw = np.tensordot(dyt, cols, axes=([0, 1], [0, 1])).reshape(f_out, c_in, kernel)

    # input gradient: dilate dy by the stride, full-correlate with flipped kernel
    l_dilated = (l_out - 1) * stride + 1
    dyd = np.zeros((batch, f_out, l_dilated + 2 * (kernel - 1)), dtype=dy.dtype)
    dyd[:, :, kernel - 1 : kernel - 1 + l_dilated : stride] = dy
    w_t = w[:, :, ::-1].transpose(1, 0, 2).reshape(c_in, -1)  # (C, F*K)
    cols_dy = _windows(dyd, kernel, 1)
    dxp_main = np.matmul(cols_dy, w_t.T).transpose(0, 2, 1)  # (B, C, (Lo-1)s+K)
    dxp = np.zeros((batch, c_in, l_padded), dtype=dy.dtype)
    dxp[:, :, : dxp_main.shape[2]] = dxp_main
    dx = dxp[:, :, left : left + length]
    return np.ascontiguousarray(dx), dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, momentum, eps, training):
    """Per-channel normalization over (batch, time).

    Training mode returns batch statistics so the caller can fold them into
    the running estimates; eval mode normalizes with the running estimates.
    """
    if training:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * inv[:, None]
    y = gamma[:, None] * xhat + beta[:, None]
    cache = (xhat, gamma, inv) if training else None
    return y, cache, (mean, var)


def batchnorm_backward(dy, cache):
    xhat, gamma, inv = cache
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[:, None]
    mean_dxhat = dxhat.mean(axis=(0, 2), keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2), keepdims=True)
    dx = inv[:, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


def relu_forward(x):
    y = np.maximum(x, 0.0)
    return y, y


def relu_backward(dy, cache):
    return dy * (cache > 0)


def dropout_forward(x, rate, rng, training):
    """Inverted dropout: train-time activations are scaled by 1/(1-rate)."""
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def global_avg_pool_forward(x):
    return x.mean(axis=2), x.shape


def global_avg_pool_backward(dy, x_shape):
    length = x_shape[2]
    return np.broadcast_to(dy[:, :, None] / length, x_shape).astype(dy.dtype, copy=True)


def dense_forward(x, w, b):
    return x @ w.T + b, x


def dense_backward(dy, cache, w):
    x = cache
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels; returns (loss, probs, dlogits)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -float(logp[np.arange(n), labels].mean())
    probs = np.exp(logp)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, probs, dlogits
