"""Weak-supervision samplers: negative labels and ranked pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError
from .rng import counter_rng

__all__ = ["PairDataset", "sample_negative_labels", "make_ranked_pairs"]


@dataclass
class PairDataset:
    """A perfect matching of instance indices plus per-pair order flags.

    first_geq_second[j] says the true label of first[j] is >= that of
    second[j]; ties are flagged True.  `dropped` records the index left
    unpaired when the instance count was odd.
    """

    first: np.ndarray
    second: np.ndarray
    first_geq_second: np.ndarray
    dropped: int | None = None

    def __post_init__(self):
        used = np.concatenate([self.first, self.second])
        if len(np.unique(used)) != len(used):
            raise ContractError("an instance index appears in more than one pair")

    def __len__(self) -> int:
        return len(self.first)


def sample_negative_labels(labels, k: int, seed: int, l: int | None = None) -> np.ndarray:
    """Per instance, rule out k labels distinct from the truth.

    Returns the allowed-set mask, bool (N, L): True on the true label and
    on every label not sampled as a negative.  Negatives are drawn
    uniformly without replacement from the L-1 wrong labels.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if l is None:
        l = int(labels.max()) + 1
    if not 1 <= k <= l - 1:
        raise ContractError(f"k must be in [1, {l - 1}], got {k}")
    if labels.min() < 0 or labels.max() >= l:
        raise ContractError(f"labels span [{labels.min()}, {labels.max()}], expected [0, {l})")
    rng = counter_rng(seed)
    # rank random scores over the L-1 wrong labels; the k smallest are negatives
    scores = rng.random((n, l - 1))
    neg_rank = np.argsort(scores, axis=1)[:, :k]
    # column j of the wrong-label table skips the true label
    wrong = np.where(neg_rank >= labels[:, None], neg_rank + 1, neg_rank)
    mask = np.ones((n, l), dtype=bool)
    rows = np.repeat(np.arange(n), k)
    mask[rows, wrong.reshape(-1)] = False
    return mask


def make_ranked_pairs(labels, seed: int) -> PairDataset:
    """Seeded uniform perfect matching with order flags from true labels."""
    labels = np.asarray(labels)
    n = len(labels)
    rng = counter_rng(seed)
    perm = rng.permutation(n)
    dropped = None
    if n % 2:
        dropped = int(perm[-1])
        perm = perm[:-1]
    first, second = perm[0::2], perm[1::2]
    return PairDataset(
        first=first,
        second=second,
        first_geq_second=labels[first] >= labels[second],
        dropped=dropped,
    )
