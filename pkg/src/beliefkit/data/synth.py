"""Synthetic scenes for segmentation and label super-resolution.

Two layouts cover the experiments: "bands" builds three horizontal
regions split by sinusoidal boundaries (a stand-in for sky / object /
water photographs), and "blobs" builds a field of smooth patches plus
thin curves, whose fine structure a block-majority coarse raster cannot
represent.  Colors per region come from overlapping distributions; at
overlap 0 the supports are disjoint and color alone separates regions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..beliefs import gaussian_blur
from ..exceptions import ContractError
from .rng import counter_rng

__all__ = [
    "SyntheticSceneSpec",
    "TextureScene",
    "CoarseScene",
    "gen_texture_scene",
    "gen_coarse_scene",
    "gen_blob_points",
]


@dataclass
class SyntheticSceneSpec:
    """Geometry and color model for generated scenes.

    color_overlap in [0, 1]: 0 gives disjoint per-region color supports,
    1 makes regions nearly indistinguishable by color.  prior_max caps
    the strongest hand-prior belief so the prior stays weak.
    """

    h: int = 96
    w: int = 96
    classes: int = 3
    layout: str = "bands"
    channels: int = 3
    color_overlap: float = 0.3
    color_noise: float = 0.08
    band_amplitude: float | None = None
    band_waves: float = 1.5
    prior_max: float = 0.7
    prior_sigma: float = 3.0

    def __post_init__(self):
        if self.layout not in ("bands", "blobs"):
            raise ContractError(f"unknown layout {self.layout!r}")
        if not 0.0 <= self.color_overlap <= 1.0:
            raise ContractError(f"color_overlap must be in [0,1], got {self.color_overlap}")
        if self.classes < 2:
            raise ContractError("need at least 2 classes")
        if not 1.0 / self.classes < self.prior_max <= 1.0:
            raise ContractError(
                f"prior_max must be in (1/{self.classes}, 1], got {self.prior_max}"
            )


@dataclass
class TextureScene:
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (H, W) int64
    prior: np.ndarray  # (H, W, L) hand prior, max entry <= spec.prior_max
    spec: SyntheticSceneSpec
    seed: int


@dataclass
class CoarseScene:
    image: np.ndarray  # (C, H, W) float32
    labels: np.ndarray  # (H, W) int64 fine labels
    coarse: np.ndarray  # (H, W) int64 coarse-class ids, one per pixel
    blocks: np.ndarray  # (H/f, W/f) int64 coarse-class ids
    coarse_classes: np.ndarray  # fine class represented by each coarse id
    cooccurrence: np.ndarray  # (C_coarse, L) pixel counts
    factor: int
    spec: SyntheticSceneSpec
    seed: int


def _paint(labels: np.ndarray, spec: SyntheticSceneSpec, rng) -> np.ndarray:
    """Per-region colors with controllable overlap; channels-first float32."""
    spacing = spec.color_noise * (3.0 - 2.6 * spec.color_overlap)
    centers = 0.2 + np.arange(spec.classes) * spacing
    noise = rng.uniform(-spec.color_noise, spec.color_noise, size=(spec.channels, *labels.shape))
    image = centers[labels][None, :, :] + noise
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _ramp_prior(labels: np.ndarray, spec: SyntheticSceneSpec) -> np.ndarray:
    """Blurred one-hot mixed with uniform so the max entry is spec.prior_max."""
    onehot = np.eye(spec.classes)[labels]
    soft = gaussian_blur(onehot, spec.prior_sigma)
    soft /= soft.sum(axis=-1, keepdims=True)
    lam = (1.0 - spec.prior_max) / (1.0 - 1.0 / spec.classes)
    mixed = (1.0 - lam) * soft + lam / spec.classes
    # rounding can leave saturated entries one ulp above the cap
    return np.minimum(mixed, spec.prior_max)


def gen_texture_scene(spec: SyntheticSceneSpec, seed: int) -> TextureScene:
    """Three stacked regions with sinusoidal boundaries, plus a weak hand prior."""
    if spec.layout != "bands":
        raise ContractError("gen_texture_scene needs layout='bands'")
    if spec.classes != 3:
        raise ContractError("the bands layout uses exactly 3 classes")
    rng = counter_rng(seed)
    h, w = spec.h, spec.w
    amp = spec.band_amplitude if spec.band_amplitude is not None else h / 8.0
    amp = min(amp, h / 6.0 - 1.0)  # keep the two boundaries from crossing
    x = np.arange(w)
    phases = rng.uniform(0, 2 * np.pi, size=2)
    b1 = h / 3.0 + amp * np.sin(2 * np.pi * spec.band_waves * x / w + phases[0])
    b2 = 2 * h / 3.0 + amp * np.sin(2 * np.pi * spec.band_waves * x / w + phases[1])
    y = np.arange(h)[:, None]
    labels = np.where(y < b1[None, :], 0, np.where(y < b2[None, :], 1, 2)).astype(np.int64)
    image = _paint(labels, spec, rng)
    prior = _ramp_prior(labels, spec)
    return TextureScene(image=image, labels=labels, prior=prior, spec=spec, seed=seed)


def _blob_labels(spec: SyntheticSceneSpec, rng) -> np.ndarray:
    """Smooth two-class field plus thin curves of the last class."""
    h, w = spec.h, spec.w
    field = gaussian_blur(rng.standard_normal((h, w)), sigma=max(h, w) / 12.0)
    cut = np.quantile(field, 0.65)
    labels = (field > cut).astype(np.int64)
    if spec.classes >= 3:
        # thin sinusoidal curves: structures far below coarse-block scale
        x = np.arange(w)
        n_curves = 3
        for c in range(n_curves):
            base = (c + 1) * h / (n_curves + 1.0)
            wig = 0.12 * h * np.sin(2 * np.pi * (1.0 + c) * x / w + rng.uniform(0, 2 * np.pi))
            center = base + wig
            for dy in (-1, 0, 1):
                rows = np.clip(np.round(center).astype(int) + dy, 0, h - 1)
                labels[rows, x] = 2
    return labels


def gen_coarse_scene(spec: SyntheticSceneSpec, factor: int, seed: int) -> CoarseScene:
    """Fine label field, its block-majority coarse raster, and their cooccurrence."""
    if spec.layout != "blobs":
        raise ContractError("gen_coarse_scene needs layout='blobs'")
    h, w = spec.h, spec.w
    if factor < 1 or h % factor or w % factor:
        raise ContractError(f"factor {factor} must divide H={h} and W={w}")
    rng = counter_rng(seed)
    labels = _blob_labels(spec, rng)
    l = spec.classes
    bh, bw = h // factor, w // factor
    block_view = labels.reshape(bh, factor, bw, factor)
    counts = np.zeros((bh, bw, l), dtype=np.int64)
    for c in range(l):
        counts[:, :, c] = (block_view == c).sum(axis=(1, 3))
    majority = counts.argmax(axis=-1)  # ties break toward the lowest class
    # coarse classes are their own vocabulary: only classes that win some
    # block exist, so every cooccurrence row has mass
    coarse_classes, blocks = np.unique(majority, return_inverse=True)
    blocks = blocks.reshape(majority.shape)
    coarse = np.repeat(np.repeat(blocks, factor, axis=0), factor, axis=1)
    cooc = np.zeros((len(coarse_classes), l), dtype=np.int64)
    np.add.at(cooc, (coarse.reshape(-1), labels.reshape(-1)), 1)
    image = _paint(labels, spec, rng)
    return CoarseScene(
        image=image,
        labels=labels,
        coarse=coarse,
        blocks=blocks,
        coarse_classes=coarse_classes,
        cooccurrence=cooc,
        factor=factor,
        spec=spec,
        seed=seed,
    )


def gen_blob_points(n: int, clusters: int, seed: int, separation: float = 6.0, dim: int = 2):
    """Gaussian point clouds for clustering demos: (points, labels).

    Cluster centers sit on a circle of radius `separation` (a line for
    dim != 2), unit isotropic noise, near-equal cluster sizes.
    """
    if n < clusters or clusters < 1:
        raise ContractError(f"need n >= clusters >= 1, got n={n}, clusters={clusters}")
    rng = counter_rng(seed, stream=7)
    labels = rng.permutation(np.arange(n) % clusters)
    centers = np.zeros((clusters, dim))
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(clusters) / clusters
        centers[:, 0] = separation * np.cos(angles)
        centers[:, 1] = separation * np.sin(angles)
    else:
        centers[:, 0] = separation * np.arange(clusters)
    points = centers[labels] + rng.standard_normal((n, dim))
    return points.astype(np.float64), labels.astype(np.int64)
