"""Finite-difference verification of taped gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward

REL_FLOOR = 1e-8  # denominator floor: avoids blowups where both gradients ~ 0


def grad_check_many(f: Callable[[], Tensor], tensors: Sequence[Tensor],
                    eps: float = 1e-5) -> float:
    """Max relative error between taped gradients of `f()` and central differences.

    `f` is a scalar-valued closure over `tensors`; every coordinate of every
    tensor is perturbed by +/- eps.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape():
        out = f()
        backward(out)
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        a = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            denom = max(abs(a[i]), abs(num), REL_FLOOR)
            worst = max(worst, abs(a[i] - num) / denom)
        t.grad = None
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Gradient check of scalar-valued `f` at `x`; returns max relative error."""
    return grad_check_many(lambda: f(x), [x], eps=eps)
