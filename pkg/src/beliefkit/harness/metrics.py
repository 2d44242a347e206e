"""Evaluation: accuracy, IoU, confusion, ROC-AUC, cluster-to-label."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..diffcore import Tensor
from ..exceptions import ContractError, DegenerateBatchError, DimensionError
from ..losses import DistributionBatch, implied_posterior

__all__ = [
    "MetricsReport",
    "predict_proba",
    "evaluate",
    "evaluate_r",
    "roc_auc",
    "cluster_to_label",
    "worker_count",
]


def worker_count() -> int:
    """Parallel workers for evaluation; BELIEFKIT_THREADS=0 (or unset) is the
    serial reference path."""
    try:
        return max(0, int(os.environ.get("BELIEFKIT_THREADS", "0")))
    except ValueError:
        return 0


@dataclass
class MetricsReport:
    """accuracy, per-class IoU (NaN for classes absent from truth and
    predictions alike), their mean, and the truth-by-prediction confusion."""

    accuracy: float
    confusion: np.ndarray
    per_class_iou: np.ndarray
    mean_iou: float
    auc: float | None = None
    loss_trace: list = field(default_factory=list)


def predict_proba(model, inputs, batch_size: int = 512) -> np.ndarray:
    """Forward `inputs` through the model in batches; rows of probabilities.

    Flattens raster-shaped outputs (N, H, W, L) to one row per pixel.
    Honors BELIEFKIT_THREADS for parallel batch evaluation; results are
    assembled in batch order, so reports match the serial path exactly.
    """
    inputs = np.asarray(inputs)
    n = len(inputs)
    starts = list(range(0, n, batch_size))

    def one(start: int) -> np.ndarray:
        out = model(Tensor(inputs[start : start + batch_size])).data
        if out.ndim > 2:
            out = out.reshape(-1, out.shape[-1])
        return out

    workers = worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(one, starts))
    else:
        chunks = [one(s) for s in starts]
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 0))


def _confusion(truth: np.ndarray, pred: np.ndarray, l: int) -> np.ndarray:
    conf = np.zeros((l, l), dtype=np.int64)
    np.add.at(conf, (truth, pred), 1)
    return conf


def _report_from_confusion(conf: np.ndarray) -> MetricsReport:
    total = conf.sum()
    accuracy = float(conf.trace() / total) if total else 0.0
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / denom, np.nan)
    present = denom > 0  # class appears in truth or predictions
    mean_iou = float(iou[present].mean()) if present.any() else 0.0
    return MetricsReport(
        accuracy=accuracy, confusion=conf, per_class_iou=iou, mean_iou=mean_iou
    )


def evaluate(model, inputs, labels, l: int | None = None, batch_size: int = 512) -> MetricsReport:
    """Argmax the model's probabilities (ties go to the lowest class)."""
    labels = np.asarray(labels).reshape(-1)
    proba = predict_proba(model, inputs, batch_size=batch_size)
    if len(proba) != len(labels):
        raise DimensionError(f"{len(proba)} predictions for {len(labels)} labels")
    l = l or proba.shape[1]
    pred = proba.argmax(axis=1)
    return _report_from_confusion(_confusion(labels, pred, l))


def evaluate_r(model, priors, inputs, labels, l: int | None = None, batch_size: int = 512) -> MetricsReport:
    """Score the implied posterior instead of the raw predictor.

    The class-conditional normalization runs over the whole evaluation set
    as one batch, so r here reflects the full evaluation population.
    """
    labels = np.asarray(labels).reshape(-1)
    if isinstance(priors, DistributionBatch):
        priors = priors.values
    priors = np.asarray(priors)
    if priors.ndim > 2:
        priors = priors.reshape(-1, priors.shape[-1])
    proba = predict_proba(model, inputs, batch_size=batch_size)
    post = implied_posterior(Tensor(proba.astype(np.float64)), priors)
    pred = post.r.data.argmax(axis=1)
    l = l or proba.shape[1]
    return _report_from_confusion(_confusion(labels, pred, l))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionError(f"{len(scores)} scores for {len(labels)} labels")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateBatchError("AUC undefined: both classes must be present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def cluster_to_label(q, labeled_indices, labeled_classes, n_classes: int | None = None):
    """Map cluster posteriors to class predictions via a labeled subset.

    mapping[c, k] = p(class c | cluster k), column-normalized mass of
    labeled points; predictions are argmax_c of q @ mapping.T.  Clusters
    with no posterior mass among the labeled points get a zero column and
    a warning (they contribute nothing to predictions).
    Returns (mapping, predictions).
    """
    if isinstance(q, DistributionBatch):
        q = q.values
    q = np.asarray(q, dtype=np.float64)
    labeled_indices = np.asarray(labeled_indices)
    labeled_classes = np.asarray(labeled_classes)
    if len(labeled_indices) == 0:
        raise ContractError("labeled subset is empty")
    if len(labeled_indices) != len(labeled_classes):
        raise DimensionError(
            f"{len(labeled_indices)} indices but {len(labeled_classes)} classes"
        )
    c = n_classes or int(labeled_classes.max()) + 1
    k = q.shape[1]
    mass = np.zeros((c, k))
    np.add.at(mass, labeled_classes, q[labeled_indices])
    col_tot = mass.sum(axis=0)
    dead = col_tot == 0
    if dead.any():
        warnings.warn(
            f"clusters {np.nonzero(dead)[0].tolist()} carry no labeled mass; dropped"
        )
    mapping = np.zeros_like(mass)
    np.divide(mass, col_tot, out=mapping, where=~dead)
    predictions = (q @ mapping.T).argmax(axis=1)
    return mapping, predictions
