"""Belief dataset container and its JSON-lines file format.

Format: first line is a header {"n": N, "d": D, "l": L, "sparse": bool};
each following line is one record {"x": [...], "p": [L floats], "y": int?}.
Sparse records store x as [[index, value], ...].  All floats are written
from float32, and the shortest-repr JSON round trip recovers those
float32 values bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..exceptions import FormatError, ValidationError
from ..losses import DistributionBatch

__all__ = ["BeliefDataset", "write_beliefs", "read_beliefs"]

_ROW_SUM_TOL = 1e-6


@dataclass
class BeliefDataset:
    """Features, per-instance prior beliefs, and optional eval-only labels.

    features: dense (N, D) float32, or a list of (indices, values) pairs
    for sparse rows (dimension D recorded separately).
    """

    features: np.ndarray | list
    priors: DistributionBatch
    labels: np.ndarray | None = None
    dim: int | None = None

    def __post_init__(self):
        n = self.priors.n
        if self.sparse:
            if self.dim is None:
                raise ValidationError("sparse features need an explicit dim")
            if len(self.features) != n:
                raise ValidationError(
                    f"{len(self.features)} feature rows but {n} prior rows"
                )
        else:
            self.features = np.asarray(self.features, dtype=np.float32)
            if self.features.ndim != 2 or len(self.features) != n:
                raise ValidationError(
                    f"features shape {self.features.shape} does not match {n} priors"
                )
            self.dim = self.features.shape[1]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != n:
                raise ValidationError(f"{len(self.labels)} labels but {n} rows")

    @property
    def sparse(self) -> bool:
        return isinstance(self.features, list)

    def __len__(self) -> int:
        return self.priors.n

    def dense_features(self, indices=None) -> np.ndarray:
        """Materialize (a slice of) the features as a dense float32 matrix."""
        if not self.sparse:
            return self.features if indices is None else self.features[indices]
        rows = range(len(self)) if indices is None else np.asarray(indices)
        out = np.zeros((len(rows), self.dim), dtype=np.float32)
        for i, r in enumerate(rows):
            idx, val = self.features[r]
            out[i, idx] = val
        return out

    def take(self, indices) -> "BeliefDataset":
        indices = np.asarray(indices)
        if self.sparse:
            feats = [self.features[i] for i in indices]
        else:
            feats = self.features[indices]
        return BeliefDataset(
            features=feats,
            priors=DistributionBatch(self.priors.values[indices], role=self.priors.role),
            labels=None if self.labels is None else self.labels[indices],
            dim=self.dim,
        )


def _f32(values) -> list:
    return [float(v) for v in np.asarray(values, dtype=np.float32)]


def write_beliefs(path, dataset: BeliefDataset) -> None:
    header = {
        "n": len(dataset),
        "d": int(dataset.dim),
        "l": dataset.priors.l,
        "sparse": dataset.sparse,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(len(dataset)):
            if dataset.sparse:
                idx, val = dataset.features[i]
                x = [[int(j), float(np.float32(v))] for j, v in zip(idx, val)]
            else:
                x = _f32(dataset.features[i])
            record = {"x": x, "p": _f32(dataset.priors.values[i])}
            if dataset.labels is not None:
                record["y"] = int(dataset.labels[i])
            fh.write(json.dumps(record) + "\n")


def read_beliefs(path) -> BeliefDataset:
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise FormatError(f"{path}: empty file, no header on line 1")
        try:
            header = json.loads(first)
            n, d, l = header["n"], header["d"], header["l"]
            sparse = bool(header["sparse"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"{path}: bad header on line 1: {e}") from e

        feats: list = []
        priors = np.zeros((n, l), dtype=np.float64)
        labels: list = []
        count = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if count >= n:
                raise FormatError(f"{path}: more than {n} records (line {lineno})")
            try:
                rec = json.loads(line)
                p = rec["p"]
                x = rec["x"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise FormatError(f"{path}: bad record on line {lineno}: {e}") from e
            if len(p) != l:
                raise FormatError(
                    f"{path}: line {lineno}: prior has {len(p)} entries, expected {l}"
                )
            priors[count] = p
            if sparse:
                pairs = np.asarray(x, dtype=np.float64).reshape(-1, 2)
                feats.append(
                    (pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.float32))
                )
            else:
                if len(x) != d:
                    raise FormatError(
                        f"{path}: line {lineno}: {len(x)} features, expected {d}"
                    )
                feats.append(np.asarray(x, dtype=np.float32))
            if "y" in rec:
                labels.append(int(rec["y"]))
            count += 1
    if count != n:
        raise FormatError(f"{path}: header promised {n} records, found {count}")
    if labels and len(labels) != n:
        raise FormatError(f"{path}: {len(labels)} records carry labels, expected 0 or {n}")

    sums = priors.sum(axis=1)
    bad = np.nonzero((np.abs(sums - 1.0) > _ROW_SUM_TOL) | (priors < 0).any(axis=1))[0]
    if len(bad):
        shown = ", ".join(str(int(b)) for b in bad[:10])
        more = "" if len(bad) <= 10 else f" (+{len(bad) - 10} more)"
        raise ValidationError(f"{path}: priors off the simplex at rows {shown}{more}")

    return BeliefDataset(
        features=feats if sparse else np.stack(feats) if feats else np.zeros((0, d), np.float32),
        priors=DistributionBatch(priors, role="prior"),
        labels=np.array(labels, dtype=np.int64) if labels else None,
        dim=d,
    )
