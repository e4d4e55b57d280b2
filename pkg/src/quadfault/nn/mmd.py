"""Squared maximum mean discrepancy with a median-heuristic Gaussian kernel."""

from __future__ import annotations

import numpy as np


def _sq_dists(Z):
    sq = (Z * Z).sum(axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def median_bandwidth(D) -> tuple[float, list]:
    """Median of the off-diagonal pairwise squared distances.

    Also returns the ``(i, j, weight)`` entries the median is a function of,
    so the bandwidth can be differentiated.
    """
    n = D.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    vals = D[iu, ju]
    if len(vals) == 0:
        return 1.0, []
    k = len(vals)
    kth = [k // 2] if k % 2 else [k // 2 - 1, k // 2]
    order = np.argpartition(vals, kth)
    if k % 2:
        picks = [(order[k // 2], 1.0)]
    else:
        picks = [(order[k // 2 - 1], 0.5), (order[k // 2], 0.5)]
    h = sum(vals[p] * w for p, w in picks)
    if h <= 1e-12:
        return 1.0, []
    return h, [(iu[p], ju[p], w) for p, w in picks]


def mmd2(X, Y, with_grad: bool = True):
    """Biased (V-statistic) squared MMD between row sets ``X`` and ``Y``.

    The bandwidth is the median pairwise squared distance of the pooled
    set and is differentiated through. Returns ``(value, dX, dY)``.
    """
    n, m = len(X), len(Y)
    Z = np.concatenate([X, Y], axis=0)
    D = _sq_dists(Z)
    # the value is kept in the input dtype so extended-precision callers keep it
    h, picks = median_bandwidth(D)
    K = np.exp(-D / h)
    W = np.empty_like(K)
    W[:n, :n] = 1.0 / (n * n)
    W[n:, n:] = 1.0 / (m * m)
    W[:n, n:] = -1.0 / (n * m)
    W[n:, :n] = -1.0 / (n * m)
    WK = W * K
    value = WK.sum()
    if not with_grad:
        return value, None, None

    G = -WK / h
    dh = (WK * D).sum() / (h * h)
    for i, j, w in picks:
        G[i, j] += dh * w
    S = G + G.T
    dZ = 2.0 * (S.sum(axis=1)[:, None] * Z - S @ Z)
    return float(max(value, 0.0)), dZ[:n], dZ[n:]
