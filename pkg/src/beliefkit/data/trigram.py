"""Alphabetic trigram features and a synthetic labeled corpus.

The corpus generator stands in for real document collections: each class
gets its own letter distribution, documents are token soups drawn from
it, and the noisy prior generator mixes the true label with seeded
misdirection (optionally biased toward some classes, which is what
debias_prior is for).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError
from .rng import counter_rng

__all__ = ["TRIGRAM_DIM", "trigram_featurize", "gen_text_corpus", "TextCorpus"]

TRIGRAM_DIM = 26**3


def trigram_featurize(text) -> tuple[np.ndarray, np.ndarray]:
    """Sparse counts of alphabetic trigrams: (indices, counts), both sorted.

    Case-folded a-z only; any non-alphabetic byte breaks the window, so
    "ab9ab" contains no trigram.  Index = 676*c1 + 26*c2 + c3.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    counts: dict[int, int] = {}
    run = []
    for ch in text.lower():
        o = ord(ch)
        if 97 <= o <= 122:
            run.append(o - 97)
            if len(run) >= 3:
                idx = 676 * run[-3] + 26 * run[-2] + run[-1]
                counts[idx] = counts.get(idx, 0) + 1
        else:
            run.clear()
    if not counts:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    indices = np.array(sorted(counts), dtype=np.int64)
    return indices, np.array([counts[i] for i in indices], dtype=np.int64)


@dataclass
class TextCorpus:
    texts: list
    labels: np.ndarray
    priors: np.ndarray  # (N, L), noisy beliefs about the labels


def gen_text_corpus(
    n_classes: int,
    docs_per_class: int,
    seed: int,
    doc_len: int = 160,
    sharpness: float = 8.0,
    prior_floor: float = 0.3,
    prior_ceil: float = 0.9,
    class_bias: np.ndarray | None = None,
) -> TextCorpus:
    """Label-conditioned token soups with noisy priors.

    Each class draws letters from its own peaked distribution (higher
    `sharpness` separates classes more).  The prior for a document mixes
    a one-hot on the true label (weight uniform in [prior_floor,
    prior_ceil]) with a random distribution; `class_bias`, if given,
    multiplies prior columns before renormalization to simulate
    systematically over-reported classes.
    """
    if n_classes < 2:
        raise ContractError(f"need at least 2 classes, got {n_classes}")
    rng = counter_rng(seed)
    letter_logits = rng.standard_normal((n_classes, 26)) * np.log(sharpness)
    letter_probs = np.exp(letter_logits)
    letter_probs /= letter_probs.sum(axis=1, keepdims=True)

    texts, labels = [], []
    alphabet = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    for c in range(n_classes):
        for _ in range(docs_per_class):
            letters = rng.choice(26, size=doc_len, p=letter_probs[c])
            chars = alphabet[letters]
            # sprinkle spaces so trigram windows break like real text
            breaks = rng.random(doc_len) < 0.12
            chars = np.where(breaks, " ", chars)
            texts.append("".join(chars))
            labels.append(c)
    labels = np.array(labels, dtype=np.int64)

    n = len(labels)
    confidence = rng.uniform(prior_floor, prior_ceil, size=n)
    noise = rng.dirichlet(np.ones(n_classes), size=n)
    priors = noise * (1.0 - confidence[:, None])
    priors[np.arange(n), labels] += confidence
    if class_bias is not None:
        priors = priors * np.asarray(class_bias, dtype=np.float64)[None, :]
        priors /= priors.sum(axis=1, keepdims=True)
    return TextCorpus(texts=texts, labels=labels, priors=priors)
