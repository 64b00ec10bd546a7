"""Finite-difference verification of reverse-mode gradients."""

import numpy as np


def gradient_check(fn, params, probes=None, step=1e-5, seed=0):
    """Return the largest relative gradient error over ``params``.

    ``fn`` takes no arguments and returns a scalar Tensor built from
    ``params`` (a sequence of leaf Tensors, or a name -> Tensor mapping).
    For each parameter, ``probes`` entries (all entries if None) are
    perturbed by +/- ``step`` and the central difference is compared with
    the backpropagated gradient. The error for one parameter is
    ``||a - n|| / max(||a|| + ||n||, 1e-6)`` over its probed entries.
    """
    if hasattr(params, "values"):
        params = list(params.values())
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        if probes is None or probes >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=probes, replace=False)
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn().data)
            flat[i] = orig - step
            lo = float(fn().data)
            flat[i] = orig
            num[j] = (hi - lo) / (2.0 * step)
        ana = a.reshape(-1)[idx]
        denom = max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-6)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
