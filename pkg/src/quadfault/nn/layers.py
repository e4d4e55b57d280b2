"""Forward/backward pairs for the handful of ops the classifier needs.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Arrays are float64 throughout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def conv1d_forward(x, W, b):
    """'Same' 1-D convolution along the last axis; x (m, cin, T), W (cout, cin, k)."""
    m, cin, T = x.shape
    cout, wcin, k = W.shape
    if cin != wcin:
        raise ShapeError(f"conv expects {wcin} input channels, got {cin}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, k - 1 - pad)))
    cols = sliding_window_view(xp, k, axis=2)  # (m, cin, T, k)
    cols = cols.transpose(0, 2, 1, 3).reshape(m * T, cin * k)
    out = cols @ W.reshape(cout, -1).T + b
    return out.reshape(m, T, cout).transpose(0, 2, 1), (cols, x.shape, W)


def conv1d_backward(dout, cache, need_dx: bool = True):
    cols, (m, cin, T), W = cache
    cout, _, k = W.shape
    pad = k // 2
    d2 = dout.transpose(0, 2, 1).reshape(m * T, cout)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dW, db
    dcols = (d2 @ W.reshape(cout, -1)).reshape(m, T, cin, k)
    dxp = np.zeros((m, cin, T + k - 1))
    for j in range(k):
        dxp[:, :, j : j + T] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dxp[:, :, pad : pad + T], dW, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool2_forward(x):
    """Non-overlapping width-2 max pooling along time; a trailing odd column is dropped."""
    T = x.shape[2]
    T2 = T // 2
    even, odd = x[:, :, 0 : 2 * T2 : 2], x[:, :, 1 : 2 * T2 : 2]
    first = even >= odd  # ties route the gradient to the earlier column
    return np.where(first, even, odd), (first, x.shape)


def maxpool2_backward(dout, cache):
    first, shape = cache
    T2 = shape[2] // 2
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :, 0 : 2 * T2 : 2] = dout * first
    dx[:, :, 1 : 2 * T2 : 2] = dout * ~first
    return dx


def dense_forward(x, W, b):
    return x @ W + b, (x, W)


def dense_backward(dout, cache):
    x, W = cache
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, y):
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    ``y`` holds 0-based class indices.
    """
    m = len(y)
    lp = log_softmax(logits)
    loss = -lp[np.arange(m), y].mean()
    d = np.exp(lp)
    d[np.arange(m), y] -= 1.0
    return loss, d / m
