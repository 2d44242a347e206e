"""Training loops: belief-supervised, pair-ranked, self-refreshing priors."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..beliefs import (
    SelfSimilarityParams,
    ranking_pair_prior,
    self_similarity_prior,
    smooth_additive,
)
from ..data.rng import counter_rng
from ..data.samplers import PairDataset
from ..diffcore import Adam, Tensor
from ..exceptions import ContractError
from ..losses import (
    DistributionBatch,
    ce_loss,
    diverse_clustering_loss,
    nll_union_loss,
    pair_rq_loss,
    qr_loss,
    rq_loss,
)
from ..models import ModelSpec
from .metrics import MetricsReport, evaluate

__all__ = [
    "LOSS_KINDS",
    "TrainConfig",
    "EpochRecord",
    "TrainResult",
    "TrainingDiverged",
    "train",
    "train_scene",
]

LOSS_KINDS = ("qr", "rq", "ce", "nll_union", "pair_rq", "diverse")

# rng stream namespaces, so one seed never reuses a Philox key
_STREAM_SHUFFLE = 1000  # + epoch
_STREAM_EVAL_SUBSET = 999


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries a snapshot of where."""

    def __init__(self, epoch: int, batch: int, loss_value: float, last_finite: float):
        self.epoch = epoch
        self.batch = batch
        self.loss_value = loss_value
        self.last_finite = last_finite
        super().__init__(
            f"non-finite loss {loss_value} at epoch {epoch}, batch {batch} "
            f"(last finite value {last_finite})"
        )


@dataclass
class TrainConfig:
    loss: str = "rq"
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 300
    seed: int = 0
    smoothing: float = 1e-4
    model: ModelSpec | None = None
    warmup_epochs: int = 0  # cross-entropy epochs before the chosen loss
    prior_refresh: int = 50  # steps between prior rebuilds (refreshing loop)
    eval_every: int = 1
    eval_train_n: int | None = None  # cap train-accuracy evaluation cost
    eval_batch: int = 512

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ContractError(f"unknown loss kind {self.loss!r}; one of {LOSS_KINDS}")
        if self.lr < 0:
            raise ContractError("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ContractError("batch_size and epochs must be positive")
        if self.smoothing <= 0:
            raise ContractError("smoothing must be > 0")
        if self.warmup_epochs < 0:
            raise ContractError("warmup_epochs must be >= 0")
        if self.warmup_epochs and self.loss in ("pair_rq", "diverse"):
            raise ContractError(f"warm-up has no target distribution for {self.loss}")
        if self.prior_refresh < 1:
            raise ContractError("prior_refresh must be >= 1")
        if self.eval_every < 1:
            raise ContractError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.model is not None:
            d["model"] = asdict(self.model)
            d["model"]["widths"] = list(self.model.widths)
        return d


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float = float("nan")
    test_acc: float = float("nan")


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)
    final_train: MetricsReport | None = None
    final_test: MetricsReport | None = None


def _param_dtype(model) -> np.dtype:
    return model.parameters()[0].value.data.dtype


def _prepare_supervision(config: TrainConfig, supervision, n: int):
    """Returns (per-instance targets or None, warm-up targets or None)."""
    kind = config.loss
    if kind == "diverse":
        if supervision is not None:
            raise ContractError("diverse loss takes no supervision")
        return None, None
    if kind == "nll_union":
        mask = np.asarray(supervision)
        if mask.dtype != np.bool_ or mask.ndim != 2 or len(mask) != n:
            raise ContractError("nll_union needs a bool (N, L) allowed mask")
        warm = None
        if config.warmup_epochs:
            warm = smooth_additive(
                mask / mask.sum(axis=1, keepdims=True), config.smoothing
            )
        return mask, warm
    # qr / rq / ce: per-instance belief rows
    if isinstance(supervision, DistributionBatch):
        supervision = supervision.values
    priors = np.asarray(supervision, dtype=np.float64)
    if priors.ndim != 2 or len(priors) != n:
        raise ContractError(f"expected (N, L) beliefs, got shape {priors.shape}")
    psm = smooth_additive(priors, config.smoothing)
    return psm, psm


def _batch_loss(kind: str, q_s: Tensor, target) -> Tensor:
    if kind == "qr":
        return qr_loss(q_s, target)
    if kind == "rq":
        return rq_loss(q_s, target)
    if kind == "ce":
        return ce_loss(q_s, target)
    if kind == "nll_union":
        return nll_union_loss(q_s, target)
    return diverse_clustering_loss(q_s)


def _check_finite(value: float, epoch: int, batch: int, last: float) -> float:
    if not np.isfinite(value):
        raise TrainingDiverged(epoch, batch, value, last)
    return value


def _maybe_eval(model, config, epoch, eval_train, eval_test, train_subset):
    tr = te = float("nan")
    if epoch % config.eval_every == 0 or epoch == config.epochs:
        if eval_train is not None:
            x, y = eval_train
            if train_subset is not None:
                x, y = x[train_subset], y[train_subset]
            tr = evaluate(model, x, y, batch_size=config.eval_batch).accuracy
        if eval_test is not None:
            te = evaluate(model, *eval_test, batch_size=config.eval_batch).accuracy
    return tr, te


def _train_subset(config: TrainConfig, eval_train) -> np.ndarray | None:
    if eval_train is None or config.eval_train_n is None:
        return None
    n = len(eval_train[1])
    if config.eval_train_n >= n:
        return None
    rng = counter_rng(config.seed, stream=_STREAM_EVAL_SUBSET)
    return np.sort(rng.choice(n, size=config.eval_train_n, replace=False))


def train(model, inputs, supervision, config: TrainConfig, eval_train=None, eval_test=None) -> TrainResult:
    """Mini-batch Adam on one of the belief losses. Mutates `model`.

    `supervision` depends on config.loss: belief rows (N, L) for qr/rq/ce,
    a bool allowed mask for nll_union, a PairDataset (optionally a tuple
    with a joint belief table) for pair_rq, and None for diverse.
    Shuffling, warm-up, and evaluation subsets all derive from config.seed,
    so a rerun reproduces the exact arithmetic.
    """
    if config.loss == "pair_rq":
        return _train_pairs(model, inputs, supervision, config, eval_train, eval_test)

    inputs = np.asarray(inputs)
    n = len(inputs)
    if n == 0:
        raise ContractError("empty training set")
    xs = inputs.astype(_param_dtype(model), copy=False)
    target_all, warm_all = _prepare_supervision(config, supervision, n)

    opt = Adam(model.parameters(), lr=config.lr)
    result = TrainResult()
    subset = _train_subset(config, eval_train)
    last_finite = float("nan")

    for epoch in range(1, config.epochs + 1):
        order = counter_rng(config.seed, stream=_STREAM_SHUFFLE + epoch).permutation(n)
        warm = epoch <= config.warmup_epochs
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            out = model(Tensor(xs[idx]))
            if out.data.ndim > 2:
                out = out.reshape((-1, out.data.shape[-1]))
            q_s = smooth_additive(out, config.smoothing)
            if warm:
                loss = ce_loss(q_s, warm_all[idx])
            elif target_all is None:
                loss = _batch_loss(config.loss, q_s, None)
            else:
                loss = _batch_loss(config.loss, q_s, target_all[idx])
            value = _check_finite(float(loss.data), epoch, b, last_finite)
            last_finite = value
            result.batch_losses.append(value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
        tr, te = _maybe_eval(model, config, epoch, eval_train, eval_test, subset)
        result.history.append(EpochRecord(epoch, total / n, tr, te))

    if eval_train is not None:
        result.final_train = evaluate(model, *eval_train, batch_size=config.eval_batch)
    if eval_test is not None:
        result.final_test = evaluate(model, *eval_test, batch_size=config.eval_batch)
    return result


def _train_pairs(model, inputs, supervision, config, eval_train, eval_test) -> TrainResult:
    if isinstance(supervision, tuple):
        pairs, prior = supervision
    else:
        pairs, prior = supervision, None
    if not isinstance(pairs, PairDataset):
        raise ContractError("pair_rq needs a PairDataset")

    inputs = np.asarray(inputs)
    xs = inputs.astype(_param_dtype(model), copy=False)
    # order each pair (high, low) so one lower-triangular table covers all
    flag = pairs.first_geq_second
    hi = np.where(flag, pairs.first, pairs.second)
    lo = np.where(flag, pairs.second, pairs.first)
    n = len(hi)
    if n == 0:
        raise ContractError("empty pair set")

    if prior is None:
        l_out = model(Tensor(xs[:1])).data.shape[-1]
        prior = ranking_pair_prior(l_out)

    opt = Adam(model.parameters(), lr=config.lr)
    result = TrainResult()
    subset = _train_subset(config, eval_train)
    last_finite = float("nan")

    for epoch in range(1, config.epochs + 1):
        order = counter_rng(config.seed, stream=_STREAM_SHUFFLE + epoch).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            q1 = smooth_additive(model(Tensor(xs[hi[idx]])), config.smoothing)
            q2 = smooth_additive(model(Tensor(xs[lo[idx]])), config.smoothing)
            loss = pair_rq_loss(q1, q2, prior)
            value = _check_finite(float(loss.data), epoch, b, last_finite)
            last_finite = value
            result.batch_losses.append(value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
        tr, te = _maybe_eval(model, config, epoch, eval_train, eval_test, subset)
        result.history.append(EpochRecord(epoch, total / n, tr, te))

    if eval_train is not None:
        result.final_train = evaluate(model, *eval_train, batch_size=config.eval_batch)
    if eval_test is not None:
        result.final_test = evaluate(model, *eval_test, batch_size=config.eval_batch)
    return result


def train_scene(
    model,
    image: np.ndarray,
    prior: np.ndarray,
    config: TrainConfig,
    selfsim: SelfSimilarityParams | None = None,
    eval_labels: np.ndarray | None = None,
) -> TrainResult:
    """Whole-scene training: each epoch is one full-image step.

    `prior` is an (H, W, L) belief raster.  With `selfsim` set, the raster
    is replaced every config.prior_refresh steps by the neighborhood
    similarity prior computed from the current (detached) predictions;
    otherwise it stays fixed.  The first config.warmup_epochs steps use
    cross-entropy against the current raster regardless of config.loss.
    train_acc in the history is pixel agreement with `eval_labels` when
    given.
    """
    if config.loss not in ("qr", "rq", "ce"):
        raise ContractError("scene loop supports qr, rq, or ce")
    x = np.asarray(image, dtype=_param_dtype(model))
    h, w = x.shape[-2], x.shape[-1]
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape[:2] != (h, w):
        raise ContractError(f"prior raster {prior.shape} does not cover {h}x{w}")
    l = prior.shape[-1]
    prior_rows = smooth_additive(prior.reshape(h * w, l), config.smoothing)

    opt = Adam(model.parameters(), lr=config.lr)
    result = TrainResult()
    last_finite = float("nan")
    labels_flat = None if eval_labels is None else np.asarray(eval_labels).reshape(-1)

    for step in range(1, config.epochs + 1):
        out = model(Tensor(x))
        q_rows = smooth_additive(out.reshape((h * w, l)), config.smoothing)
        if selfsim is not None and step > 1 and (step - 1) % config.prior_refresh == 0:
            q_map = q_rows.data.reshape(h, w, l)
            prior_rows = smooth_additive(
                self_similarity_prior(q_map, selfsim).reshape(h * w, l),
                config.smoothing,
            )
        kind = "ce" if step <= config.warmup_epochs else config.loss
        loss = _batch_loss(kind, q_rows, prior_rows)
        value = _check_finite(float(loss.data), step, 0, last_finite)
        last_finite = value
        result.batch_losses.append(value)
        opt.zero_grad()
        loss.backward()
        opt.step()

        acc = float("nan")
        if labels_flat is not None and (step % config.eval_every == 0 or step == config.epochs):
            acc = float((q_rows.data.argmax(axis=1) == labels_flat).mean())
        result.history.append(EpochRecord(step, value / (h * w), acc, float("nan")))
    return result
