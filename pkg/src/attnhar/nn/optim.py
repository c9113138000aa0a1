from __future__ import annotations

from typing import Iterable

from .tensor import Parameter


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0) -> None:
    """Heavy-ball SGD: ``buf = momentum*buf + grad; value -= lr*buf``; grads are then zeroed."""
    for p in params:
        p.momentum_buf *= momentum
        p.momentum_buf += p.grad
        p.data -= lr * p.momentum_buf
        p.zero_grad()
