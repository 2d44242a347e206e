"""IDX file parsing and the image dataset container."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import ContractError, DimensionError, FormatError

__all__ = ["ImageDataset", "load_idx", "load_mnist"]

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


@dataclass
class ImageDataset:
    """images: (N, C, H, W) floats in [0, 1]; labels: (N,) ints in [0, L)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimensionError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.images):
            raise DimensionError(
                f"{len(self.images)} images but labels shape {self.labels.shape}"
            )
        if len(self.labels) and self.labels.min() < 0:
            raise ContractError("labels must be nonnegative")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, indices) -> "ImageDataset":
        indices = np.asarray(indices)
        return ImageDataset(self.images[indices], self.labels[indices])


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def load_idx(path) -> np.ndarray:
    """Parse one IDX file (gzip-transparent).

    Image files (magic 0x00000803) come back as (N, 1, H, W) float32
    scaled by 1/255; label files (magic 0x00000801) as (N,) int64.
    """
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated before magic (offset {len(raw)})")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic == _LABELS_MAGIC:
        ndim = 1
    elif magic == _IMAGES_MAGIC:
        ndim = 3
    else:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated in dimension list (offset {len(raw)})")
    dims = struct.unpack(f">{ndim}i", raw[4:header_len])
    if any(d < 0 for d in dims):
        raise FormatError(f"{path}: negative dimension {dims} at offset 4")
    expected = header_len + int(np.prod(dims))
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated at offset {len(raw)}, expected {expected} bytes"
        )
    body = np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=header_len)
    if magic == _LABELS_MAGIC:
        return body.astype(np.int64)
    n, h, w = dims
    return (body.reshape(n, 1, h, w).astype(np.float32)) / np.float32(255.0)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{directory}/{stem}[.gz]")


def load_mnist(directory, which: str = "train") -> ImageDataset:
    """Load the canonical MNIST IDX pair from `directory`."""
    if which not in ("train", "test"):
        raise ContractError(f"which must be 'train' or 'test', got {which!r}")
    directory = Path(directory)
    prefix = "train" if which == "train" else "t10k"
    images = load_idx(_find(directory, f"{prefix}-images-idx3-ubyte"))
    labels = load_idx(_find(directory, f"{prefix}-labels-idx1-ubyte"))
    if labels.max() > 9:
        raise FormatError(f"{directory}: label {labels.max()} outside [0, 9]")
    return ImageDataset(images, labels)
