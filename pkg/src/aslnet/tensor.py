"""Dense tensor helpers and deterministic random streams.

Tensors are plain ``numpy.ndarray`` objects in NHWC layout. Everything here
defaults to float32; pass ``dtype=np.float64`` where tight finite-difference
tolerances are needed.
"""
from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError

DEFAULT_DTYPE = np.float32


def _check_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ParameterError(f"invalid shape {shape}: dims must be >= 1")
    return shape


def _key_id(key: str) -> int:
    # crc32 is stable across processes and platforms, unlike hash()
    return zlib.crc32(key.encode("utf-8"))


class Rng:
    """Seeded PCG64 stream that can be forked into keyed substreams.

    ``fork("dropout")`` derives a child from the seed and the key path only, so
    drawing from one substream never shifts another.
    """

    def __init__(self, seed: int = 0, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def fork(self, key: str | int) -> "Rng":
        k = key if isinstance(key, int) else _key_id(str(key))
        return Rng(self.seed, self.path + (k,))

    def random(self, shape) -> np.ndarray:
        """float64 draws on [0, 1)."""
        return self._gen.random(_check_shape(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def uniform(rng: Rng, lo: float, hi: float, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    if not lo < hi:
        raise ParameterError(f"uniform requires lo < hi, got lo={lo}, hi={hi}")
    u = rng.random(shape)
    out = (lo + (hi - lo) * u).astype(dtype)
    # rounding to a narrower dtype can land exactly on hi
    top = np.nextafter(np.asarray(hi, dtype=dtype), np.asarray(lo, dtype=dtype))
    return np.minimum(out, top)


def gaussian(rng: Rng, mean: float, std: float, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Box-Muller normal draws built on the uniform stream."""
    if std < 0:
        raise ParameterError(f"gaussian requires std >= 0, got {std}")
    shape = _check_shape(shape)
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
    return (mean + std * z).reshape(shape).astype(dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return a @ b


def _same_shape(a: np.ndarray, b: np.ndarray, op: str):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{op}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


def add(a, b):
    _same_shape(a, b, "add")
    return a + b


def sub(a, b):
    _same_shape(a, b, "sub")
    return a - b


def mul(a, b):
    _same_shape(a, b, "mul")
    return a * b


def scale(a, s: float):
    if np.ndim(s) != 0:
        raise ShapeError("scale takes a scalar factor")
    return a * np.asarray(s, dtype=np.asarray(a).dtype)


def clip(a, lo: float, hi: float):
    if lo > hi:
        raise ParameterError(f"clip requires lo <= hi, got {lo}, {hi}")
    return np.clip(a, lo, hi)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale, "clip": clip}


def elementwise(op: str, *operands):
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ParameterError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


def zeros(shape: Sequence[int], dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)
