"""Central finite-difference check of the composite-loss gradients."""

from __future__ import annotations

import numpy as np

from quadfault.nn.model import MemberModel, loss_and_grads, objective


def grad_check(
    model: MemberModel,
    batch,
    epsilon: float = 1e-5,
    n_checks: int = 100,
    lam: float = 0.05,
    dropout: float = 0.1,
    seed: int = 0,
    grad_fn=loss_and_grads,
    zero_tol: float = 1e-11,
) -> float:
    """Max relative error over ``n_checks`` randomly chosen parameter entries.

    ``batch`` is ``(xa, ya, xd, xe)``. The dropout mask is regenerated from
    the same seed on every evaluation so the objective is a fixed function.
    Analytic gradients are float64; the finite differences are taken on an
    extended-precision (``np.longdouble``) evaluation of the same loss so
    that round-off does not swamp near-zero gradients. ``grad_fn`` supplies
    the analytic gradients (swap it to test the check). Entries where both
    gradients are below ``zero_tol`` in magnitude count as agreeing: some
    biases have an identically zero gradient because the healthy-mean
    difference cancels them.
    """
    xa, ya, xd, xe = batch
    _, analytic = grad_fn(
        {k: v.copy() for k, v in model.params.items()}, xa, ya, xd, xe, lam, dropout, np.random.default_rng(seed)
    )

    ld = np.longdouble
    params = {k: v.astype(ld) for k, v in model.params.items()}
    xa_l, xd_l, xe_l = (np.asarray(a, dtype=ld) for a in (xa, xd, xe))

    def f(p):
        return objective(p, xa_l, ya, xd_l, xe_l, lam, dropout, np.random.default_rng(seed))

    names = list(params)
    sizes = np.array([params[k].size for k in names])
    rng = np.random.default_rng(seed + 1)
    flat_picks = rng.choice(sizes.sum(), size=min(n_checks, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for fp in flat_picks:
        pi = int(np.searchsorted(offsets, fp, side="right") - 1)
        name = names[pi]
        idx = np.unravel_index(int(fp - offsets[pi]), params[name].shape)
        orig = params[name][idx]
        params[name][idx] = orig + ld(epsilon)
        up = f(params)
        params[name][idx] = orig - ld(epsilon)
        down = f(params)
        params[name][idx] = orig
        numeric = float((up - down) / (2 * ld(epsilon)))
        a = float(analytic[name][idx])
        scale = max(abs(a), abs(numeric))
        if scale < zero_tol:
            continue
        worst = max(worst, abs(a - numeric) / scale)
    return float(worst)
