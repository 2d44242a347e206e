"""Implicit-posterior objectives.

Predictions over a batch stand in for the class-conditional likelihoods of
an unstated generative model: column-normalizing the prediction matrix
gives, per class, each instance's share of that class (class_conditional).
Multiplying by per-instance prior beliefs and renormalizing yields the
implied posterior r, and the losses pull the predictor q toward r from
either side of the KL divergence.

All losses take the prediction matrix as a Tensor (gradients flow through
both the numerator and the batch normalization) and return a scalar
Tensor.  Prior beliefs may be a DistributionBatch, ndarray, or Tensor.
Values are in nats; 0 * log 0 is treated as 0 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, as_tensor, reshape, tsum, xlogy
from .diffcore.tensor import log as tlog
from .exceptions import (
    ContractError,
    ContradictionError,
    DegenerateBatchError,
    DimensionError,
)

__all__ = [
    "DistributionBatch",
    "JointPrior",
    "ImpliedPosterior",
    "PairImpliedPosterior",
    "ColumnSumEma",
    "class_conditional",
    "implied_posterior",
    "qr_loss",
    "rq_loss",
    "ce_loss",
    "nll_union_loss",
    "free_energy",
    "diverse_clustering_loss",
    "pair_implied_posterior",
    "pair_rq_loss",
    "allowed_mask",
]

_ROW_SUM_TOL = 1e-6


@dataclass
class DistributionBatch:
    """N x L matrix whose rows are distributions over classes.

    `role` records what the rows mean ("prior", "prediction", "posterior");
    it is documentation, not behavior.
    """

    values: np.ndarray
    role: str = "prior"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(
                f"DistributionBatch needs an N x L matrix, got shape {self.values.shape}"
            )
        if np.any(self.values < 0):
            raise ContractError("DistributionBatch entries must be nonnegative")
        sums = self.values.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
            worst = int(np.argmax(np.abs(sums - 1.0)))
            raise ContractError(
                f"DistributionBatch row {worst} sums to {sums[worst]:.9f}, expected 1"
            )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def l(self) -> int:
        return self.values.shape[1]


@dataclass
class JointPrior:
    """L x L belief table over ordered class pairs; entries sum to 1."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2 or self.table.shape[0] != self.table.shape[1]:
            raise DimensionError(f"JointPrior table must be square, got {self.table.shape}")
        if np.any(self.table < 0):
            raise ContractError("JointPrior entries must be nonnegative")
        total = self.table.sum()
        if abs(total - 1.0) > _ROW_SUM_TOL:
            raise ContractError(f"JointPrior mass is {total:.9f}, expected 1")


@dataclass
class ImpliedPosterior:
    """Posterior rows r and their normalizers z (z_i in (0, 1])."""

    r: Tensor
    z: Tensor


@dataclass
class PairImpliedPosterior:
    """Joint posterior per pair plus its two marginals."""

    joint: Tensor  # (N, L, L)
    first: Tensor  # (N, L), marginal over the second slot
    second: Tensor  # (N, L), marginal over the first slot
    z: Tensor  # (N,)


def _rows(x, name: str) -> Tensor:
    if isinstance(x, DistributionBatch):
        x = x.values
    t = as_tensor(x)
    if t.ndim != 2:
        raise DimensionError(f"{name} must be an N x L matrix, got shape {t.shape}")
    return t


def _same_shape(q: Tensor, p: Tensor) -> None:
    if q.shape != p.shape:
        raise DimensionError(f"prediction shape {q.shape} != belief shape {p.shape}")


class ColumnSumEma:
    """Exponential moving average of prediction column sums.

    For batches too small to estimate per-class mass, class_conditional can
    blend the current column sums with this running state:
    denom = decay * running + (1 - decay) * current.  Only the current
    batch's contribution is differentiated; the running state is a constant.
    Off by default everywhere.
    """

    def __init__(self, decay: float = 0.99):
        if not 0.0 <= decay < 1.0:
            raise ContractError(f"decay must be in [0, 1), got {decay}")
        self.decay = decay
        self.state: np.ndarray | None = None

    def blend(self, colsum: Tensor) -> Tensor:
        if self.state is None:
            self.state = colsum.data.copy()
            return colsum
        mixed = colsum * (1.0 - self.decay) + self.decay * self.state
        self.state = self.decay * self.state + (1.0 - self.decay) * colsum.data
        return mixed


def class_conditional(q, ema: ColumnSumEma | None = None) -> Tensor:
    """Share of each class's batch mass held by each instance.

    a[i, l] = q[i, l] / sum_j q[j, l].  Columns of the result sum to 1;
    rows do not.  Gradients flow through numerator and denominator alike,
    which is what couples instances within a batch.
    """
    q = _rows(q, "q")
    colsum = tsum(q, axis=0, keepdims=True)
    if np.any(colsum.data <= 0):
        dead = int(np.argmin(colsum.data[0]))
        raise DegenerateBatchError(
            f"class column {dead} has zero total mass over the batch"
        )
    if ema is not None:
        colsum = ema.blend(colsum)
    return q / colsum


def implied_posterior(q, p, ema: ColumnSumEma | None = None) -> ImpliedPosterior:
    """Combine prior beliefs with batch class-conditionals.

    r[i, l] proportional to p[i, l] * a[i, l], normalized per row; the
    normalizer z_i = sum_l p[i, l] a[i, l] lies in (0, 1].
    """
    q, p = _rows(q, "q"), _rows(p, "p")
    _same_shape(q, p)
    a = class_conditional(q, ema=ema)
    m = p * a
    z = tsum(m, axis=1, keepdims=True)
    if np.any(z.data <= 0):
        i = int(np.argmin(z.data[:, 0]))
        raise ContradictionError(
            f"instance {i}: beliefs and predictions share no mass, posterior undefined"
        )
    return ImpliedPosterior(r=m / z, z=reshape(z, (q.shape[0],)))


def _kl(a: Tensor, b: Tensor) -> Tensor:
    return tsum(xlogy(a, a)) - tsum(xlogy(a, b))


def qr_loss(q, p, ema: ColumnSumEma | None = None) -> Tensor:
    """sum_i KL(q_i || r_i): mode-seeking; quietly drops belief modes."""
    q = _rows(q, "q")
    post = implied_posterior(q, p, ema=ema)
    return _kl(q, post.r)


def rq_loss(q, p, ema: ColumnSumEma | None = None) -> Tensor:
    """sum_i KL(r_i || q_i): mass-covering; reduces to CE on hard beliefs."""
    q = _rows(q, "q")
    post = implied_posterior(q, p, ema=ema)
    return _kl(post.r, q)


def ce_loss(q, p) -> Tensor:
    """Cross entropy -sum_i sum_l p[i, l] log q[i, l] against fixed targets."""
    q, p = _rows(q, "q"), _rows(p, "p")
    _same_shape(q, p)
    return -tsum(xlogy(p, q))


def allowed_mask(sets, l: int) -> np.ndarray:
    """Bool (N, L) mask from an iterable of per-instance allowed-label sets."""
    sets = list(sets)
    mask = np.zeros((len(sets), l), dtype=bool)
    for i, s in enumerate(sets):
        for lab in s:
            if not 0 <= lab < l:
                raise ContractError(f"instance {i}: label {lab} outside [0, {l})")
            mask[i, lab] = True
    return mask


def nll_union_loss(q, allowed) -> Tensor:
    """-sum_i log sum_{l in allowed_i} q[i, l].

    `allowed` is a bool (N, L) mask; every row must allow at least one class.
    """
    q = _rows(q, "q")
    mask = np.asarray(allowed)
    if mask.dtype != np.bool_:
        raise ContractError("allowed must be a bool mask; build one with allowed_mask()")
    if mask.shape != q.shape:
        raise DimensionError(f"mask shape {mask.shape} != prediction shape {q.shape}")
    nonempty = mask.any(axis=1)
    if not nonempty.all():
        bad = int(np.argmin(nonempty))
        raise ContractError(f"instance {bad} has an empty allowed set")
    union = tsum(q * mask.astype(q.dtype), axis=1)
    return -tsum(tlog(union))


def free_energy(q, p) -> Tensor:
    """Batch free energy: sum_il q[i,l] log(sum_j q[j,l]) - sum_il q[i,l] log p[i,l].

    Equals qr_loss plus sum_i log(1/z_i); minimizing it balances sharp,
    belief-consistent predictions against crowding into few classes.
    """
    q, p = _rows(q, "q"), _rows(p, "p")
    _same_shape(q, p)
    colsum = tsum(q, axis=0, keepdims=True)
    return tsum(xlogy(q, colsum)) - tsum(xlogy(q, p))


def diverse_clustering_loss(q) -> Tensor:
    """Entropy-regularized self-clustering: confident rows, balanced columns.

    -sum_il q log q + sum_il q log(sum_j q[j, l]); no beliefs involved.
    """
    q = _rows(q, "q")
    colsum = tsum(q, axis=0, keepdims=True)
    return tsum(xlogy(q, colsum)) - tsum(xlogy(q, q))


def pair_implied_posterior(q1, q2, prior) -> PairImpliedPosterior:
    """Posterior over ordered label pairs for paired instances.

    Slot predictions are column-normalized within their own slot's batch;
    the joint belief table then couples the two slots:
    r_j(l1, l2) proportional to prior[l1, l2] * a1[j, l1] * a2[j, l2].
    """
    if isinstance(prior, JointPrior):
        prior = prior.table
    prior = np.asarray(prior, dtype=np.float64)
    q1, q2 = _rows(q1, "q1"), _rows(q2, "q2")
    _same_shape(q1, q2)
    n, l = q1.shape
    if prior.shape != (l, l):
        raise DimensionError(f"joint prior shape {prior.shape}, expected {(l, l)}")
    a1 = class_conditional(q1)
    a2 = class_conditional(q2)
    m = reshape(a1, (n, l, 1)) * reshape(a2, (n, 1, l)) * prior[None, :, :]
    z = tsum(m, axis=(1, 2), keepdims=True)
    if np.any(z.data <= 0):
        j = int(np.argmin(z.data[:, 0, 0]))
        raise ContradictionError(
            f"pair {j}: joint belief and predictions share no mass"
        )
    r = m / z
    return PairImpliedPosterior(
        joint=r,
        first=tsum(r, axis=2),
        second=tsum(r, axis=1),
        z=reshape(z, (n,)),
    )


def pair_rq_loss(q1, q2, prior) -> Tensor:
    """sum_j KL(r_j(l1) || q1_j) + KL(r_j(l2) || q2_j) for ranked pairs."""
    q1, q2 = _rows(q1, "q1"), _rows(q2, "q2")
    post = pair_implied_posterior(q1, q2, prior)
    return _kl(post.first, q1) + _kl(post.second, q2)
