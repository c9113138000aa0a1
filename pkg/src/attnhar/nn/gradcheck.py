"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, no_grad


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                      h: float = 1e-5, floor: float = 1e-6,
                      max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter
    values on every call.  The per-entry error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps entries whose true
    gradient is ~0 from dominating through roundoff.  ``max_entries`` samples
    that many entries per parameter instead of sweeping all of them.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                a = grad.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
    return worst
