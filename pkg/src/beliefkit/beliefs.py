"""Constructors for prior beliefs.

Each function turns some weak annotation (negative labels, rankings,
coarse rasters, self-similarity statistics, mask proposals) into
per-instance or per-pixel distributions over classes.  Vector batches
come back as DistributionBatch; raster-shaped priors come back as
(H, W, L) arrays whose last axis is on the simplex.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Adam, Parameter, Tensor, softmax as t_softmax, tsum, xlogy
from .exceptions import ContractError, DegenerateBatchError, DimensionError
from .losses import DistributionBatch, JointPrior, allowed_mask

__all__ = [
    "SelfSimilarityParams",
    "MaskProposalSet",
    "partial_label_prior",
    "ranking_pair_prior",
    "gaussian_blur",
    "coarse_to_prior",
    "fuse_auxiliary",
    "debias_prior",
    "smooth_additive",
    "self_similarity_prior",
    "fit_self_similarity_params",
    "admixture_responsibilities",
    "admixture_weights",
    "admixture_prior",
    "load_cooccurrence",
    "save_cooccurrence",
]

_MASK_CLAMP = 1e-6


# -- simple vector priors ----------------------------------------------


def partial_label_prior(allowed, l: int) -> DistributionBatch:
    """Uniform belief over each instance's allowed label set.

    `allowed` is an iterable of label sets or a bool (N, L) mask.
    """
    mask = np.asarray(allowed) if not isinstance(allowed, (list, tuple)) else None
    if mask is None or mask.dtype != np.bool_:
        mask = allowed_mask(allowed, l)
    if mask.shape[1] != l:
        raise DimensionError(f"mask has {mask.shape[1]} columns, expected {l}")
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.argmin(counts))
        raise ContractError(f"instance {bad} has an empty allowed set")
    values = mask.astype(np.float64) / counts[:, None]
    return DistributionBatch(values, role="prior")


def ranking_pair_prior(l: int, first_geq_second: bool = True) -> JointPrior:
    """Uniform joint belief over ordered pairs consistent with a ranking.

    Ties sit on the diagonal, so the support has l*(l+1)/2 entries.
    """
    if l < 1:
        raise ContractError(f"need at least one class, got {l}")
    tri = np.tril(np.ones((l, l)))
    if not first_geq_second:
        tri = tri.T
    return JointPrior(tri / tri.sum())


def fuse_auxiliary(prior: np.ndarray, aux_mass: np.ndarray) -> np.ndarray:
    """Add nonnegative auxiliary mass to a belief map, then renormalize.

    Works on any (..., L) stack of distributions.
    """
    prior = np.asarray(prior, dtype=np.float64)
    aux = np.asarray(aux_mass, dtype=np.float64)
    if aux.shape != prior.shape:
        raise DimensionError(f"aux shape {aux.shape} != prior shape {prior.shape}")
    if np.any(aux < 0):
        raise ContractError("auxiliary mass must be nonnegative")
    fused = prior + aux
    return fused / fused.sum(axis=-1, keepdims=True)


def debias_prior(p) -> DistributionBatch:
    """Divide each class column by its batch mean, then renormalize rows.

    Counters class imbalance baked into likelihood-style beliefs: a class
    that is uniformly over-represented across the batch gets scaled down
    before each row is renormalized.
    """
    values = p.values if isinstance(p, DistributionBatch) else np.asarray(p, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"expected an N x L matrix, got shape {values.shape}")
    means = values.mean(axis=0)
    if np.any(means <= 0):
        dead = int(np.argmin(means))
        raise ContractError(f"class column {dead} has zero mean over the batch")
    scaled = values / means
    return DistributionBatch(scaled / scaled.sum(axis=1, keepdims=True), role="prior")


def smooth_additive(d, eps: float = 1e-4):
    """(d + eps) / rowsum(d + eps): strictly positive rows, order preserved.

    Accepts a DistributionBatch or ndarray (smoothed over the last axis),
    or a Tensor of prediction rows (the smoothing stays differentiable).
    """
    if eps <= 0:
        raise ContractError(f"smoothing constant must be positive, got {eps}")
    if isinstance(d, Tensor):
        l = d.shape[-1]
        row_total = tsum(d, axis=d.ndim - 1, keepdims=True) + l * eps
        return (d + eps) / row_total
    wrap = isinstance(d, DistributionBatch)
    values = d.values if wrap else np.asarray(d, dtype=np.float64)
    out = values + eps
    out /= out.sum(axis=-1, keepdims=True)
    return DistributionBatch(out, role=d.role) if wrap else out


# -- raster machinery ---------------------------------------------------


def gaussian_blur(raster: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of an (H, W) or (H, W, K) raster.

    The sampled kernel is truncated at radius ceil(4*sigma) and
    renormalized; borders are reflect-padded; sigma=0 is the identity.
    """
    if sigma < 0:
        raise ContractError(f"sigma must be nonnegative, got {sigma}")
    raster = np.asarray(raster, dtype=np.float64)
    if sigma == 0:
        return raster.copy()
    radius = int(np.ceil(4.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()

    def along(axis_arr: np.ndarray) -> np.ndarray:
        # axis 0 convolution; callers transpose as needed
        padded = np.pad(
            axis_arr,
            [(radius, radius)] + [(0, 0)] * (axis_arr.ndim - 1),
            mode="reflect",
        )
        out = np.zeros_like(axis_arr)
        for j, w in enumerate(kernel):
            out += w * padded[j : j + axis_arr.shape[0]]
        return out

    blurred = along(raster)
    blurred = np.swapaxes(along(np.swapaxes(blurred, 0, 1)), 0, 1)
    return blurred


def coarse_to_prior(coarse: np.ndarray, cooc: np.ndarray, sigma: float) -> np.ndarray:
    """Per-pixel beliefs from a coarse class raster.

    One-hot encode the coarse classes, blur each channel, push through the
    row-normalized cooccurrence table (C coarse classes -> L fine classes),
    and renormalize per pixel.  Returns (H, W, L).
    """
    coarse = np.asarray(coarse)
    if coarse.ndim != 2 or coarse.dtype.kind not in "iu":
        raise DimensionError(
            f"coarse raster must be an integer H x W grid, got {coarse.dtype} {coarse.shape}"
        )
    cooc = np.asarray(cooc, dtype=np.float64)
    if cooc.ndim != 2:
        raise DimensionError(f"cooccurrence must be C x L, got shape {cooc.shape}")
    c, l = cooc.shape
    if coarse.min() < 0 or coarse.max() >= c:
        raise ContractError(
            f"coarse values span [{coarse.min()}, {coarse.max()}], expected [0, {c})"
        )
    if np.any(cooc < 0):
        raise ContractError("cooccurrence counts must be nonnegative")
    row_sums = cooc.sum(axis=1)
    if np.any(row_sums <= 0):
        dead = int(np.argmin(row_sums))
        raise ContractError(f"coarse class {dead} has an all-zero cooccurrence row")
    onehot = np.eye(c)[coarse]  # (H, W, C)
    blurred = gaussian_blur(onehot, sigma)
    remapped = blurred @ (cooc / row_sums[:, None])
    total = remapped.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ContractError("a pixel lost all belief mass during remapping")
    return remapped / total


# -- self-similarity ----------------------------------------------------


@dataclass
class SelfSimilarityParams:
    """Per-class potentials for the neighborhood-agreement prior.

    phi_l = gamma_l + alpha_l * (small-window mean of q(l))
                    + beta_l  * (large-window mean of q(l)).
    The contrastive setting alpha=1, beta=-1 rewards labels that are
    locally common but rare at the larger scale.
    """

    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    small: int = 5
    large: int = 51

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if not (self.gamma.shape == self.alpha.shape == self.beta.shape):
            raise DimensionError("gamma, alpha, beta must share one shape (L,)")
        for side, name in ((self.small, "small"), (self.large, "large")):
            if side < 1 or side % 2 == 0:
                raise ContractError(f"{name} window side must be odd positive, got {side}")
        if self.large <= self.small:
            raise ContractError(
                f"large window ({self.large}) must exceed small window ({self.small})"
            )

    @classmethod
    def contrastive(cls, l: int, small: int = 5, large: int = 51) -> "SelfSimilarityParams":
        return cls(np.zeros(l), np.ones(l), -np.ones(l), small=small, large=large)


def _box_mean(stack: np.ndarray, side: int) -> np.ndarray:
    """Windowed mean of an (H, W, L) stack; windows clip at borders and the
    divisor is the true pixel count, so edges stay unbiased."""
    h, w, _ = stack.shape
    r = side // 2
    ii = np.zeros((h + 1, w + 1, stack.shape[2]))
    ii[1:, 1:] = stack.cumsum(axis=0).cumsum(axis=1)
    y = np.arange(h)
    x = np.arange(w)
    y0, y1 = np.clip(y - r, 0, h), np.clip(y + r + 1, 0, h)
    x0, x1 = np.clip(x - r, 0, w), np.clip(x + r + 1, 0, w)
    sums = (
        ii[y1[:, None], x1[None, :]]
        - ii[y0[:, None], x1[None, :]]
        - ii[y1[:, None], x0[None, :]]
        + ii[y0[:, None], x0[None, :]]
    )
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return sums / counts[:, :, None]


def _similarity_features(q_map: np.ndarray, params: SelfSimilarityParams):
    q_map = np.asarray(q_map, dtype=np.float64)
    if q_map.ndim != 3:
        raise DimensionError(f"q_map must be (H, W, L), got shape {q_map.shape}")
    return _box_mean(q_map, params.small), _box_mean(q_map, params.large)


def self_similarity_prior(q_map: np.ndarray, params: SelfSimilarityParams) -> np.ndarray:
    """Neighborhood-agreement belief map: softmax of the per-class potential."""
    m_small, m_large = _similarity_features(q_map, params)
    phi = params.gamma + params.alpha * m_small + params.beta * m_large
    phi -= phi.max(axis=-1, keepdims=True)
    e = np.exp(phi)
    return e / e.sum(axis=-1, keepdims=True)


def fit_self_similarity_params(
    q_map: np.ndarray,
    params: SelfSimilarityParams | None = None,
    iters: int = 400,
    lr: float = 0.1,
    tol: float = 1e-6,
) -> tuple[SelfSimilarityParams, bool]:
    """Fit (gamma, alpha, beta) to the current prediction statistics.

    Multinomial logistic regression of the window-mean features onto the
    predictions themselves (mean CE objective, Adam).  Returns the fitted
    parameters and a convergence flag; when the flag is False the best
    parameters so far come back with a warning.
    """
    q_map = np.asarray(q_map, dtype=np.float64)
    if q_map.ndim != 3 or q_map.shape[0] * q_map.shape[1] < 100:
        raise ContractError(
            f"need an (H, W, L) map with at least 100 pixels, got {q_map.shape}"
        )
    l = q_map.shape[2]
    params = params or SelfSimilarityParams.contrastive(l)
    m_small, m_large = _similarity_features(q_map, params)
    n_pix = q_map.shape[0] * q_map.shape[1]
    feats_s = m_small.reshape(n_pix, l)
    feats_l = m_large.reshape(n_pix, l)
    targets = q_map.reshape(n_pix, l)

    gamma = Parameter("gamma", Tensor(params.gamma.copy()))
    alpha = Parameter("alpha", Tensor(params.alpha.copy()))
    beta = Parameter("beta", Tensor(params.beta.copy()))
    opt = Adam([gamma, alpha, beta], lr=lr)
    converged = False
    for _ in range(iters):
        opt.zero_grad()
        phi = gamma.value + alpha.value * feats_s + beta.value * feats_l
        pred = t_softmax(phi, axis=-1)
        loss = -tsum(xlogy(targets, pred)) * (1.0 / n_pix)
        loss.backward()
        grad_norm = max(
            float(np.abs(p.value.grad).max()) if p.value.grad is not None else 0.0
            for p in (gamma, alpha, beta)
        )
        if grad_norm < tol:
            converged = True
            break
        opt.step()
    if not converged:
        warnings.warn("self-similarity fit hit the iteration cap; returning best-so-far")
    fitted = SelfSimilarityParams(
        gamma.value.data.copy(),
        alpha.value.data.copy(),
        beta.value.data.copy(),
        small=params.small,
        large=params.large,
    )
    return fitted, converged


# -- mask admixtures ----------------------------------------------------


@dataclass
class MaskProposalSet:
    """M soft foreground masks over an H x W frame.

    `confidence` scales nothing by itself; it is carried so selection
    updates can consult it.  `weights` is the selection distribution p(m).
    """

    masks: np.ndarray  # (M, H, W) foreground probabilities
    confidence: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.masks.ndim != 3:
            raise DimensionError(f"masks must be (M, H, W), got {self.masks.shape}")
        if np.any(self.masks < 0) or np.any(self.masks > 1):
            raise ContractError("mask values must lie in [0, 1]")
        m = self.masks.shape[0]
        if self.confidence is None:
            self.confidence = np.ones(m)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.confidence.shape != (m,) or np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ContractError("confidence must be M values in [0, 1]")
        if self.weights is None:
            self.weights = np.full(m, 1.0 / m)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (m,) or np.any(self.weights < 0):
            raise ContractError("weights must be M nonnegative values")
        if abs(self.weights.sum() - 1.0) > 1e-6:
            raise ContractError(f"weights sum to {self.weights.sum():.9f}, expected 1")


def _fg_assignment(label_to_fg, l: int) -> np.ndarray:
    """Normalize an assignment to an (L, 2) matrix of [bg, fg] columns."""
    arr = np.asarray(label_to_fg)
    if arr.ndim == 1:
        if arr.shape[0] != l:
            raise DimensionError(f"assignment length {arr.shape[0]}, expected {l}")
        fg = arr.astype(np.float64)
        return np.stack([1.0 - fg, fg], axis=1)
    if arr.shape != (l, 2):
        raise DimensionError(f"assignment must be (L,) or (L, 2), got {arr.shape}")
    return arr.astype(np.float64)


def admixture_responsibilities(
    q_map: np.ndarray, label_to_fg, masks: MaskProposalSet
) -> np.ndarray:
    """Per-pixel responsibility of each mask proposal, (H, W, M).

    With w_i(f) the predicted foreground weight at pixel i,
    s_i(m) proportional to p(m) * p(fg|m)^w_i(fg) * p(bg|m)^w_i(bg).
    Mask probabilities are clamped to [1e-6, 1 - 1e-6] before the logs.
    """
    q_map = np.asarray(q_map, dtype=np.float64)
    if q_map.ndim != 3:
        raise DimensionError(f"q_map must be (H, W, L), got {q_map.shape}")
    h, w, l = q_map.shape
    if masks.masks.shape[1:] != (h, w):
        raise DimensionError(
            f"mask frame {masks.masks.shape[1:]} != prediction frame {(h, w)}"
        )
    assign = _fg_assignment(label_to_fg, l)
    w_fg = q_map @ assign[:, 1]  # (H, W)
    clamped = np.clip(masks.masks, _MASK_CLAMP, 1.0 - _MASK_CLAMP)
    log_s = (
        np.log(masks.weights)[None, None, :]
        + w_fg[:, :, None] * np.log(clamped).transpose(1, 2, 0)
        + (1.0 - w_fg)[:, :, None] * np.log(1.0 - clamped).transpose(1, 2, 0)
    )
    log_s -= log_s.max(axis=-1, keepdims=True)
    s = np.exp(log_s)
    return s / s.sum(axis=-1, keepdims=True)


def admixture_weights(s: np.ndarray) -> np.ndarray:
    """Selection distribution p(m) proportional to total responsibility."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 3:
        raise DimensionError(f"responsibilities must be (H, W, M), got {s.shape}")
    totals = s.sum(axis=(0, 1))
    return totals / totals.sum()


def admixture_prior(
    masks: MaskProposalSet, weights: np.ndarray, fg_to_label: np.ndarray
) -> np.ndarray:
    """Per-pixel class beliefs implied by weighted mask proposals, (H, W, L).

    p_i(l) = sum_f p(l|f) * sum_m p(f at i|m) p(m).
    """
    weights = np.asarray(weights, dtype=np.float64)
    fg_to_label = np.asarray(fg_to_label, dtype=np.float64)
    if fg_to_label.ndim != 2 or fg_to_label.shape[0] != 2:
        raise DimensionError(f"fg_to_label must be (2, L), got {fg_to_label.shape}")
    if np.any(np.abs(fg_to_label.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("fg_to_label rows must be on the simplex")
    if weights.shape != (masks.masks.shape[0],):
        raise DimensionError(
            f"weights shape {weights.shape} != mask count {masks.masks.shape[0]}"
        )
    p_fg = np.tensordot(weights, masks.masks, axes=(0, 0))  # (H, W)
    mix = np.stack([1.0 - p_fg, p_fg], axis=-1)  # (H, W, 2)
    return mix @ fg_to_label


# -- cooccurrence CSV ----------------------------------------------------


def save_cooccurrence(path, cooc: np.ndarray, class_names=None) -> None:
    cooc = np.asarray(cooc, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if class_names is not None:
            writer.writerow(list(class_names))
        for row in cooc:
            writer.writerow([repr(float(v)) for v in row])


def load_cooccurrence(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 1:
                    continue  # header row of class names
                raise ContractError(f"{path}: non-numeric entry on line {lineno}")
    cooc = np.asarray(rows, dtype=np.float64)
    if cooc.ndim != 2 or cooc.size == 0:
        raise ContractError(f"{path}: expected a C x L table")
    return cooc
