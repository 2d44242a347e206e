"""Adam optimizer over numpy parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..exceptions import DimensionError
from .tensor import Tensor

__all__ = ["Parameter", "AdamState", "adam_step", "Adam"]


@dataclass
class Parameter:
    """A named trainable tensor; models list these in declaration order."""

    name: str
    value: Tensor

    def __post_init__(self):
        self.value.requires_grad = True


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState):
    """One Adam update, in place. Returns (params, state).

    First and second moments are allocated lazily on the first call; the
    bias-corrected step is lr * m_hat / (sqrt(v_hat) + eps).
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Stateful wrapper tying AdamState to a list of Parameters."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.value.zero_grad()

    def step(self) -> None:
        arrays = [p.value.data for p in self.params]
        grads = [
            p.value.grad if p.value.grad is not None else np.zeros_like(p.value.data)
            for p in self.params
        ]
        adam_step(arrays, grads, self.state)
