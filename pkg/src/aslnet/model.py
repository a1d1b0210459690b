"""The 13-row ASL classifier: build, forward/backward, summary and weight files."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, StateError
from .layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, softmax
from .tensor import DEFAULT_DTYPE, Rng

MAGIC = b"ASLW"
FORMAT_VERSION = 1
DTYPE_F32 = 0

# golden values for num_classes=30
GOLDEN_COUNTS = (0, 896, 128, 18496, 73856, 0, 0, 512, 295168, 0, 0, 1638464, 1950)
GOLDEN_TOTALS = (2029470, 2029150, 320)


@dataclass
class ModelConfig:
    input_h: int = 50
    input_w: int = 50
    input_c: int = 3
    conv_filters: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    kernel: int = 3
    dense_units: int = 64
    num_classes: int = 29
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.conv_filters) != 4 or min(self.conv_filters) < 1:
            raise ConfigError("conv_filters needs four positive filter counts")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        shrink = self.kernel - 1
        for d in (self.input_h, self.input_w):
            a = d - 3 * shrink
            b = a // 2 - shrink
            if a < 2 or a % 2 or b < 2 or b % 2:
                raise ConfigError(
                    f"input {self.input_h}x{self.input_w} does not fit the layer stack "
                    "(both pooling stages need even, positive sizes)")


class SummaryRow(NamedTuple):
    name: str
    output_shape: tuple
    params: int


class Model:
    """Conv-BN-Conv-Conv-Pool-Dropout-BN-Conv-Pool-Flatten-Dense-Dense(softmax)."""

    def __init__(self, cfg: ModelConfig, layers: list[Layer], dtype=DEFAULT_DTYPE):
        self.cfg = cfg
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.logits: np.ndarray | None = None
        self.probs: np.ndarray | None = None
        self._trained_forward = False

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.cfg.input_h, self.cfg.input_w, self.cfg.input_c)

    def forward(self, x: np.ndarray, training: bool = False, rng: Rng | None = None) -> np.ndarray:
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"model expects [N,{','.join(map(str, self.input_shape))}], got {x.shape}")
        h = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            h = layer.forward(h, training=training, rng=rng)
        self.logits = h
        self.probs = softmax(h)
        self._trained_forward = training
        return self.probs

    def backward(self, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate a gradient w.r.t. the pre-softmax logits (the fused
        cross-entropy gradient). Returns one gradient per trainable tensor."""
        if not self._trained_forward or self.logits is None:
            raise StateError("backward needs a train-mode forward first")
        if grad_logits.shape != self.logits.shape:
            raise ShapeError(f"gradient shape {grad_logits.shape} != logits {self.logits.shape}")
        g = grad_logits.astype(self.dtype, copy=False)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return self.gradients()

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{l.name}/{k}": v for l in self.layers for k, v in l.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{l.name}/{k}": l.grads[k] for l in self.layers for k in l.params}

    def tensors(self) -> dict[str, np.ndarray]:
        """Every stored tensor, trainable first within each layer, in layer order."""
        out = {}
        for l in self.layers:
            for k, v in {**l.params, **l.state}.items():
                out[f"{l.name}/{k}"] = v
        return out

    def count_params(self) -> tuple[int, int, int]:
        tr = sum(l.count_params()[0] for l in self.layers)
        nt = sum(l.count_params()[1] for l in self.layers)
        return tr + nt, tr, nt

    def summary(self) -> list[SummaryRow]:
        rows = [SummaryRow("Input layer", (None, *self.input_shape), 0)]
        shape = self.input_shape
        for l in self.layers:
            shape = l.output_shape(shape)
            rows.append(SummaryRow(l.kind, (None, *shape), sum(l.count_params())))
        return rows

    def astype(self, dtype) -> "Model":
        clone = build_model(self.cfg, Rng(0), dtype=dtype)
        for name, t in clone.tensors().items():
            t[...] = self.tensors()[name]
        return clone

    def predict_proba(self, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
        outs = [self.forward(x[s:s + batch_size]) for s in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0, self.cfg.num_classes), self.dtype)


def build_model(cfg: ModelConfig, rng: Rng | None = None, dtype=DEFAULT_DTYPE) -> Model:
    """Layers in summary order; Glorot-uniform kernels, zero biases, identity BN."""
    rng = rng if rng is not None else Rng(cfg.seed)
    f1, f2, f3, f4 = cfg.conv_filters
    k = cfg.kernel
    layers: list[Layer] = [
        Conv2D("conv2d", f1, k),
        BatchNorm("batch_normalization"),
        Conv2D("conv2d_1", f2, k),
        Conv2D("conv2d_2", f3, k),
        MaxPool2D("max_pooling2d"),
        Dropout("dropout", cfg.dropout_rate),
        BatchNorm("batch_normalization_1"),
        Conv2D("conv2d_3", f4, k),
        MaxPool2D("max_pooling2d_1"),
        Flatten("flatten"),
        Dense("dense", cfg.dense_units, activation="relu"),
        Dense("dense_1", cfg.num_classes, activation=None),  # softmax applied by Model
    ]
    init = rng.fork("init")
    shape = (cfg.input_h, cfg.input_w, cfg.input_c)
    for layer in layers:
        shape = layer.build(shape, init.fork(layer.name), np.dtype(dtype))
    return Model(cfg, layers, dtype)


def format_summary(rows: list[SummaryRow], totals: tuple[int, int, int]) -> str:
    def fmt_shape(s):
        return "(" + ", ".join("None" if d is None else str(d) for d in s) + ")"

    lines = [f"{'Layer':<22}{'Output Shape':<24}{'# Parameters':>14}", "-" * 60]
    for i, r in enumerate(rows):
        shape = fmt_shape(r.output_shape)
        if i == 0:
            shape = f"[{shape}]"
        lines.append(f"{r.name:<22}{shape:<24}{r.params:>14}")
    lines.append("-" * 60)
    lines.append(f"Total params: {totals[0]:,}")
    lines.append(f"Trainable params: {totals[1]:,}")
    lines.append(f"Non-trainable params: {totals[2]:,}")
    return "\n".join(lines)


# --- weight files -----------------------------------------------------------
# "ASLW" | u32 version | u32 num_classes | u32 count |
#   per tensor: u16 name_len | name | u8 ndim | ndim*u32 dims | u8 dtype | f32le payload

def save_weights(model: Model, path) -> Path:
    path = Path(path)
    tensors = model.tensors()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", FORMAT_VERSION, model.cfg.num_classes, len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(struct.pack("<B", DTYPE_F32))
        buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    path.write_bytes(buf.getvalue())
    return path


def _read(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"truncated weights file while reading {what}")
    return b


def read_header(path) -> tuple[int, int]:
    """(num_classes, tensor_count) from a weights file."""
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, not an ASLW weights file")
        version, num_classes, count = struct.unpack("<III", _read(f, 12, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported weights version {version}")
    return num_classes, count


def load_weights(path, cfg: ModelConfig | None = None) -> Model:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"weights file not found: {path}")
    file_classes, count = read_header(path)
    if cfg is None:
        cfg = ModelConfig(num_classes=file_classes)
    model = build_model(cfg, Rng(cfg.seed))
    expected = model.tensors()
    with open(path, "rb") as f:
        f.seek(16)
        seen = []
        for _ in range(count):
            (n,) = struct.unpack("<H", _read(f, 2, "tensor name length"))
            name = _read(f, n, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(f, 1, f"{name} rank"))
            dims = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, f"{name} dims"))
            (tag,) = struct.unpack("<B", _read(f, 1, f"{name} dtype"))
            if tag != DTYPE_F32:
                raise FormatError(f"{name}: unsupported dtype tag {tag}")
            if name not in expected:
                raise FormatError(f"{name}: tensor not part of the model")
            if tuple(dims) != expected[name].shape:
                raise FormatError(
                    f"{name}: shape {tuple(dims)} in file does not match model {expected[name].shape}")
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            data = np.frombuffer(_read(f, nbytes, f"{name} payload"), dtype="<f4")
            expected[name][...] = data.reshape(dims)
            seen.append(name)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after last tensor")
    missing = [k for k in expected if k not in seen]
    if missing:
        raise FormatError(f"weights file is missing tensor {missing[0]}")
    if file_classes != cfg.num_classes:
        raise FormatError(f"header num_classes {file_classes} != config {cfg.num_classes}")
    return model
