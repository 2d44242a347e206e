"""Small predictor zoo.

Every model maps inputs to probability rows (softmax applied), exposes its
trainable tensors as an ordered Parameter list, and can be rebuilt from a
ModelSpec.  Initialization is uniform in +-sqrt(6 / fan_in) from a
counter-based generator, so a (spec, seed) pair pins the weights on any
platform.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import (
    Parameter,
    Tensor,
    as_tensor,
    conv2d,
    leaky_relu,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)
from .exceptions import ContractError, DimensionError, FormatError

__all__ = [
    "ModelSpec",
    "Model",
    "LogisticModel",
    "MlpModel",
    "SmallCnnModel",
    "PatchFcnModel",
    "build_model",
    "count_parameters",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"BKPT1\n"


@dataclass
class ModelSpec:
    """Everything needed to rebuild a model architecture.

    kind: one of "logistic", "mlp", "small_cnn", "patch_fcn".
    in_dim is the feature count for vector models; in_channels/in_side
    describe image models.  widths means hidden sizes for the MLP,
    conv channels for small_cnn, and (filters, layers) for patch_fcn.
    """

    kind: str
    classes: int
    in_dim: int = 0
    in_channels: int = 1
    in_side: int = 28
    widths: tuple = ()
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp", "small_cnn", "patch_fcn"):
            raise ContractError(f"unknown model kind {self.kind!r}")
        if self.classes < 1:
            raise ContractError(f"need at least one class, got {self.classes}")
        if self.dtype not in ("float32", "float64"):
            raise ContractError(f"dtype must be float32 or float64, got {self.dtype}")
        self.widths = tuple(self.widths)


class _Init:
    """Uniform +-sqrt(6/fan_in) initializer with a counter-based stream."""

    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(np.random.Philox(seed))
        self.dtype = dtype

    def weight(self, shape, fan_in: int) -> np.ndarray:
        lim = np.sqrt(6.0 / fan_in)
        return self.rng.uniform(-lim, lim, size=shape).astype(self.dtype)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=self.dtype)


class Model:
    """Base: ordered parameters plus a forward returning probability rows."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.params: list[Parameter] = []

    def _add(self, name: str, array: np.ndarray) -> Tensor:
        p = Parameter(name, Tensor(array))
        self.params.append(p)
        return p.value

    def parameters(self) -> list[Parameter]:
        return self.params

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


class LogisticModel(Model):
    """softmax(x W + b) on flat features."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        if spec.in_dim < 1:
            raise ContractError("logistic model needs in_dim >= 1")
        init = _Init(spec.seed, spec.dtype)
        self.w = self._add("w", init.weight((spec.in_dim, spec.classes), spec.in_dim))
        self.b = self._add("b", init.zeros(spec.classes))

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise DimensionError(
                f"expected (N, {self.spec.in_dim}) features, got {x.shape}"
            )
        return softmax(matmul(x, self.w) + self.b, axis=-1)


class MlpModel(Model):
    """ReLU MLP; widths are the hidden sizes."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        if spec.in_dim < 1:
            raise ContractError("mlp needs in_dim >= 1")
        init = _Init(spec.seed, spec.dtype)
        dims = [spec.in_dim, *spec.widths, spec.classes]
        self.layers = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            w = self._add(f"fc{i}.w", init.weight((d_in, d_out), d_in))
            b = self._add(f"fc{i}.b", init.zeros(d_out))
            self.layers.append((w, b))

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise DimensionError(
                f"expected (N, {self.spec.in_dim}) features, got {x.shape}"
            )
        h = x
        for w, b in self.layers[:-1]:
            h = relu(matmul(h, w) + b)
        w, b = self.layers[-1]
        return softmax(matmul(h, w) + b, axis=-1)


class SmallCnnModel(Model):
    """Four 3x3 stride-2 convolutions, then a linear head.

    Default channels (16, 32, 40, 40) on 28x28 single-channel input give
    exactly 32,410 parameters.
    """

    DEFAULT_CHANNELS = (16, 32, 40, 40)

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        channels = spec.widths or self.DEFAULT_CHANNELS
        init = _Init(spec.seed, spec.dtype)
        self.convs = []
        c_prev, side = spec.in_channels, spec.in_side
        for i, c in enumerate(channels, start=1):
            fan_in = c_prev * 9
            w = self._add(f"conv{i}.w", init.weight((c, c_prev, 3, 3), fan_in))
            b = self._add(f"conv{i}.b", init.zeros((c, 1, 1)))
            self.convs.append((w, b))
            side = (side + 2 - 3) // 2 + 1
            c_prev = c
        if side < 1:
            raise ContractError(f"input side {spec.in_side} too small for 4 stride-2 layers")
        self.flat_dim = c_prev * side * side
        self.head_w = self._add("head.w", init.weight((self.flat_dim, spec.classes), self.flat_dim))
        self.head_b = self._add("head.b", init.zeros(spec.classes))

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"expected (N, {self.spec.in_channels}, {self.spec.in_side}, "
                f"{self.spec.in_side}) images, got {x.shape}"
            )
        h = x
        for w, b in self.convs:
            h = relu(conv2d(h, w, stride=2, padding=1) + b)
        h = reshape(h, (x.shape[0], self.flat_dim))
        return softmax(matmul(h, self.head_w) + self.head_b, axis=-1)


class PatchFcnModel(Model):
    """Five 3x3 stride-1 same-padded convolutions; per-pixel softmax.

    Layers 1-4 carry `filters` channels (default 128) under leaky ReLU
    (slope 0.01); layer 5 maps to class logits.  Receptive field 11x11,
    translation-equivariant away from borders.  forward returns (N, H, W, L).
    """

    LEAK = 0.01

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        filters = spec.widths[0] if spec.widths else 128
        layers = spec.widths[1] if len(spec.widths) > 1 else 5
        if layers < 2:
            raise ContractError("patch_fcn needs at least 2 layers")
        init = _Init(spec.seed, spec.dtype)
        self.convs = []
        c_prev = spec.in_channels
        for i in range(1, layers + 1):
            c_out = spec.classes if i == layers else filters
            w = self._add(f"conv{i}.w", init.weight((c_out, c_prev, 3, 3), c_prev * 9))
            b = self._add(f"conv{i}.b", init.zeros((c_out, 1, 1)))
            self.convs.append((w, b))
            c_prev = c_out

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        squeeze = x.ndim == 3
        if squeeze:
            x = reshape(x, (1, *x.shape))
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"expected (N, {self.spec.in_channels}, H, W) images, got {x.shape}"
            )
        h = x
        for w, b in self.convs[:-1]:
            h = leaky_relu(conv2d(h, w, stride=1, padding=1) + b, slope=self.LEAK)
        w, b = self.convs[-1]
        h = conv2d(h, w, stride=1, padding=1) + b  # (N, L, H, W)
        h = transpose(h, (0, 2, 3, 1))
        out = softmax(h, axis=-1)
        if squeeze:
            out = reshape(out, out.shape[1:])
        return out


_KINDS = {
    "logistic": LogisticModel,
    "mlp": MlpModel,
    "small_cnn": SmallCnnModel,
    "patch_fcn": PatchFcnModel,
}


def build_model(spec: ModelSpec) -> Model:
    return _KINDS[spec.kind](spec)


def count_parameters(model: Model) -> int:
    return sum(p.value.size for p in model.parameters())


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    """Write magic + JSON header + raw little-endian float32 blob.

    Parameters are serialized in declaration order; float64 models are
    cast down to float32 on disk.
    """
    header = {
        "spec": asdict(model.spec),
        "params": [{"name": p.name, "shape": list(p.value.shape)} for p in model.parameters()],
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.value.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild the model saved by save_checkpoint; returns (model, extra)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: bad magic at offset 0, not a checkpoint")
    nl = blob.find(b"\n", len(CHECKPOINT_MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: header line not terminated (offset {len(blob)})")
    try:
        header = json.loads(blob[len(CHECKPOINT_MAGIC) : nl])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: malformed header: {e}") from e
    spec_dict = dict(header["spec"])
    spec_dict["widths"] = tuple(spec_dict.get("widths", ()))
    model = build_model(ModelSpec(**spec_dict))
    offset = nl + 1
    for p, meta in zip(model.parameters(), header["params"]):
        if p.name != meta["name"] or list(p.value.shape) != meta["shape"]:
            raise FormatError(
                f"{path}: parameter mismatch at {meta['name']} (declared {meta['shape']})"
            )
        nbytes = int(np.prod(meta["shape"])) * 4 if meta["shape"] else 4
        chunk = blob[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise FormatError(
                f"{path}: blob truncated at offset {offset + len(chunk)}, "
                f"needed {nbytes} bytes for {meta['name']}"
            )
        values = np.frombuffer(chunk, dtype="<f4").reshape(meta["shape"])
        p.value.data = values.astype(model.spec.dtype)
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes at offset {offset}")
    return model, header.get("extra", {})
