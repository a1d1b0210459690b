"""Layer math with hand-written backward passes.

The module-level functions are the raw forward/backward kernels; the classes
below wrap them with parameters, cached activations and gradients so a model
can chain them. Images are NHWC, conv kernels are [kh, kw, Cin, Cout].
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatchError, ParameterError, ShapeError, StateError
from .tensor import DEFAULT_DTYPE, Rng, uniform

# cap on im2col buffer size (elements) per chunk of the batch
_COL_BUDGET = 1 << 23

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99


def glorot_limit(fan_in: int, fan_out: int) -> float:
    if fan_in < 1 or fan_out < 1:
        raise ParameterError(f"glorot fans must be >= 1, got {fan_in}, {fan_out}")
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, shape, dtype=DEFAULT_DTYPE):
    limit = glorot_limit(fan_in, fan_out)
    return uniform(rng, -limit, limit, shape, dtype=dtype)


def conv_fans(kh: int, kw: int, cin: int, cout: int) -> tuple[int, int]:
    return kh * kw * cin, kh * kw * cout


# --- convolution -----------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, h, w, c = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # [n, ho, wo, c, kh, kw]
    win = win.transpose(0, 1, 2, 4, 5, 3)
    return win.reshape(n * (h - kh + 1) * (w - kw + 1), kh * kw * c)


def _chunks(n: int, per_sample: int):
    step = max(1, _COL_BUDGET // max(per_sample, 1))
    for s in range(0, n, step):
        yield slice(s, min(n, s + step))


def _check_conv(x: np.ndarray, w: np.ndarray):
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N,H,W,C] input, got {x.shape}")
    kh, kw, cin, _ = w.shape
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(f"conv2d spatial dims {x.shape[1:3]} smaller than kernel {kh}x{kw}")
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[3]}, kernel {cin}")


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation plus bias."""
    _check_conv(x, w)
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    ho, wo = h - kh + 1, wd - kw + 1
    wmat = w.reshape(kh * kw * cin, cout)
    out = np.empty((n, ho, wo, cout), dtype=np.result_type(x, w))
    for sl in _chunks(n, ho * wo * kh * kw * cin):
        cols = _im2col(x[sl], kh, kw)
        out[sl] = (cols @ wmat).reshape(-1, ho, wo, cout)
    out += b
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    """Returns (dx, dw, db) for ``conv2d_forward(x, w, b)``."""
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    ho, wo = h - kh + 1, wd - kw + 1
    wmat = w.reshape(kh * kw * cin, cout)
    dx = np.zeros_like(x)
    dw = np.zeros((kh * kw * cin, cout), dtype=w.dtype)
    for sl in _chunks(n, ho * wo * kh * kw * cin):
        cols = _im2col(x[sl], kh, kw)
        d2 = dout[sl].reshape(-1, cout)
        dw += cols.T @ d2
        dcols = (d2 @ wmat.T).reshape(-1, ho, wo, kh, kw, cin)
        dxs = dx[sl]
        for i in range(kh):
            for j in range(kw):
                dxs[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    db = dout.sum(axis=(0, 1, 2))
    return dx, dw.reshape(w.shape), db


# --- batch normalization -------------------------------------------------

def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    if x.ndim == 4:
        return (0, 1, 2)
    if x.ndim == 2:
        return (0,)
    raise ShapeError(f"batchnorm expects [N,H,W,C] or [N,F], got {x.shape}")


def batchnorm_forward(x, gamma, beta, moving_mean, moving_var, training: bool,
                      eps: float = BN_EPSILON):
    """Returns (y, cache). In training mode the cache also holds the batch
    mean and variance the caller folds into the moving statistics."""
    axes = _bn_axes(x)
    if training:
        pop = int(np.prod([x.shape[a] for a in axes]))
        if pop < 2:
            raise DegenerateBatchError("batchnorm train mode needs a population of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = moving_mean, moving_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    return y, {"xhat": xhat, "inv_std": inv_std, "mean": mean, "var": var,
               "axes": axes, "training": training}


def batchnorm_backward(dy, gamma, cache):
    """Returns (dx, dgamma, dbeta)."""
    axes, xhat, inv_std = cache["axes"], cache["xhat"], cache["inv_std"]
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    if not cache["training"]:
        return dxhat * inv_std, dgamma, dbeta
    m = dy.size // dy.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


# --- pooling, dropout, activations ------------------------------------------

def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    return (x.reshape(n, h // 2, 2, w // 2, 2, c)
             .transpose(0, 1, 3, 5, 2, 4)
             .reshape(n, h // 2, w // 2, c, 4))


def maxpool2x2_forward(x: np.ndarray):
    """Non-overlapping 2x2 max pooling. Returns (out, argmax) where argmax
    indexes the row-major window position; ties go to the first."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects [N,H,W,C], got {x.shape}")
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"maxpool needs even spatial dims, got {x.shape[1:3]}")
    win = _pool_windows(x)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2x2_backward(dout: np.ndarray, arg: np.ndarray, in_shape) -> np.ndarray:
    n, h, w, c = in_shape
    dwin = np.zeros(arg.shape + (4,), dtype=dout.dtype)  # [n, h/2, w/2, c, 4]
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return (dwin.reshape(n, h // 2, w // 2, c, 2, 2)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(n, h, w, c))


def dropout_mask(rng: Rng, shape, rate: float) -> np.ndarray:
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(shape, dtype=bool)
    return rng.random(shape) >= rate


def dropout_forward(x, mask, rate: float):
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    return x * mask * np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)


def dropout_backward(dout, mask, rate: float):
    return dout * mask * np.asarray(1.0 / (1.0 - rate), dtype=dout.dtype)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dprobs, probs):
    return probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))


def flatten_forward(x):
    return x.reshape(x.shape[0], -1)


def flatten_backward(dout, in_shape):
    return dout.reshape(in_shape)


def dense_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense expects [N,{w.shape[0]}] input, got {x.shape}")
    return x @ w + b


def dense_backward(x, w, dout):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


# --- stateful layer wrappers ------------------------------------------------

class Layer:
    kind = "Layer"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def build(self, input_shape, rng: Rng, dtype) -> tuple[int, ...]:
        return self.output_shape(input_shape)

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def count_params(self) -> tuple[int, int]:
        """(trainable, non_trainable)."""
        return (sum(p.size for p in self.params.values()),
                sum(s.size for s in self.state.values()))

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called without a cached forward")
        return self._cache

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, name, filters: int, kernel: int = 3, activation: str | None = "relu"):
        super().__init__(name)
        self.filters, self.kernel, self.activation = filters, kernel, activation

    def output_shape(self, s):
        h, w, _ = s
        if h < self.kernel or w < self.kernel:
            raise ShapeError(f"{self.name}: input {h}x{w} smaller than kernel")
        return (h - self.kernel + 1, w - self.kernel + 1, self.filters)

    def build(self, input_shape, rng, dtype):
        k, cin = self.kernel, input_shape[-1]
        fan_in, fan_out = conv_fans(k, k, cin, self.filters)
        self.params["kernel"] = glorot_uniform(rng, fan_in, fan_out, (k, k, cin, self.filters), dtype)
        self.params["bias"] = np.zeros(self.filters, dtype=dtype)
        return self.output_shape(input_shape)

    def forward(self, x, training=False, rng=None):
        z = conv2d_forward(x, self.params["kernel"], self.params["bias"])
        y = relu_forward(z) if self.activation == "relu" else z
        self._cache = (x, z)
        return y

    def backward(self, dout):
        x, z = self._cached()
        if self.activation == "relu":
            dout = relu_backward(dout, z)
        dx, dw, db = conv2d_backward(x, self.params["kernel"], dout)
        self.grads = {"kernel": dw, "bias": db}
        return dx


class BatchNorm(Layer):
    kind = "Batch Normalization"

    def __init__(self, name, eps: float = BN_EPSILON, momentum: float = BN_MOMENTUM):
        super().__init__(name)
        self.eps, self.momentum = eps, momentum

    def build(self, input_shape, rng, dtype):
        c = input_shape[-1]
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.state["moving_mean"] = np.zeros(c, dtype=dtype)
        self.state["moving_variance"] = np.ones(c, dtype=dtype)
        return tuple(input_shape)

    def forward(self, x, training=False, rng=None):
        p, s = self.params, self.state
        y, cache = batchnorm_forward(x, p["gamma"], p["beta"], s["moving_mean"],
                                     s["moving_variance"], training, self.eps)
        if training:
            m = np.asarray(self.momentum, dtype=s["moving_mean"].dtype)
            s["moving_mean"][...] = m * s["moving_mean"] + (1 - m) * cache["mean"]
            s["moving_variance"][...] = m * s["moving_variance"] + (1 - m) * cache["var"]
        self._cache = cache
        return y

    def backward(self, dout):
        dx, dg, db = batchnorm_backward(dout, self.params["gamma"], self._cached())
        self.grads = {"gamma": dg, "beta": db}
        return dx


class MaxPool2D(Layer):
    kind = "MaxPooling2D"

    def output_shape(self, s):
        h, w, c = s
        if h % 2 or w % 2:
            raise ShapeError(f"{self.name}: odd spatial dims {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x, training=False, rng=None):
        out, arg = maxpool2x2_forward(x)
        self._cache = (arg, x.shape)
        return out

    def backward(self, dout):
        arg, shape = self._cached()
        return maxpool2x2_backward(dout, arg, shape)


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, name, rate: float = 0.2):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        # set to a boolean array to replay a fixed mask (gradient checking)
        self.frozen_mask: np.ndarray | None = None
        self.last_mask: np.ndarray | None = None

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            self._cache = None
            return x
        if self.frozen_mask is not None:
            mask = self.frozen_mask
        else:
            if rng is None:
                raise StateError(f"{self.name}: train-mode dropout needs an Rng")
            mask = dropout_mask(rng, x.shape, self.rate)
        self.last_mask = self._cache = mask
        return dropout_forward(x, mask, self.rate)

    def backward(self, dout):
        if self._cache is None:
            return dout  # eval mode is an identity
        return dropout_backward(dout, self._cache, self.rate)


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, s):
        return (int(np.prod(s)),)

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return flatten_forward(x)

    def backward(self, dout):
        return flatten_backward(dout, self._cached())


class Dense(Layer):
    kind = "Dense"

    def __init__(self, name, units: int, activation: str | None = "relu"):
        super().__init__(name)
        self.units, self.activation = units, activation

    def output_shape(self, s):
        return (self.units,)

    def build(self, input_shape, rng, dtype):
        (fan_in,) = input_shape
        self.params["kernel"] = glorot_uniform(rng, fan_in, self.units, (fan_in, self.units), dtype)
        self.params["bias"] = np.zeros(self.units, dtype=dtype)
        return (self.units,)

    def forward(self, x, training=False, rng=None):
        z = dense_forward(x, self.params["kernel"], self.params["bias"])
        y = relu_forward(z) if self.activation == "relu" else z
        self._cache = (x, z)
        return y

    def backward(self, dout):
        x, z = self._cached()
        if self.activation == "relu":
            dout = relu_backward(dout, z)
        dx, dw, db = dense_backward(x, self.params["kernel"], dout)
        self.grads = {"kernel": dw, "bias": db}
        return dx
