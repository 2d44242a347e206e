"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

__all__ = ["grad_check"]


def grad_check(
    fn: Callable[..., Tensor],
    params: np.ndarray | Sequence[np.ndarray],
    step: float = 1e-5,
    atol: float = 1e-8,
) -> float:
    """Max relative error between backward() and central differences.

    `fn` maps one Tensor per entry of `params` to a scalar Tensor.  Arrays
    are promoted to float64 before differencing.  The per-coordinate error
    is |analytic - numeric| / (|analytic| + |numeric| + 1e-12); coordinates
    agreeing within `atol` absolutely count as exact, so true-zero
    gradients are not scored against finite-difference rounding noise.
    """
    single = isinstance(params, np.ndarray)
    arrays = [np.array(params if single else p, dtype=np.float64) for p in ([params] if single else params)]

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = keep - step
            lo = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            a = float(analytic[k].reshape(-1)[i])
            if abs(a - numeric) < atol:
                continue
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
