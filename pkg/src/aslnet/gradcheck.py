"""Finite-difference verification of every backward pass, in float64.

Each check compares analytic gradients of a random linear functional (or the
cross-entropy loss, for the full stack) against central differences and
reports the norm-wise relative error ||a - n|| / max(||a||, ||n||).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from .model import ModelConfig, build_model
from .optim import crossentropy_from_logits, onehot
from .tensor import Rng

H = 1e-5
LAYER_TOL = 1e-5
STACK_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    seed: int
    max_rel_error: float
    tol: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)


def rel_error(a: np.ndarray, n: np.ndarray) -> float:
    a, n = np.ravel(a), np.ravel(n)
    den = max(np.linalg.norm(a), np.linalg.norm(n))
    if den == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / den)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def _gen(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, sum(map(ord, name))])


def _away_from_zero(a: np.ndarray, margin: float = 1e-2) -> np.ndarray:
    return np.where(np.abs(a) < margin, np.copysign(margin, a) + a, a)


def check_conv2d(seed: int) -> CheckResult:
    g = _gen(seed, "conv2d")
    x = g.standard_normal((2, 6, 6, 3))
    w = g.standard_normal((3, 3, 3, 4)) * 0.3
    b = g.standard_normal(4)
    r = g.standard_normal((2, 4, 4, 4))
    f = lambda: float((L.conv2d_forward(x, w, b) * r).sum())
    dx, dw, db = L.conv2d_backward(x, w, r)
    err = max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)),
              rel_error(db, numeric_grad(f, b)))
    return CheckResult("conv2d", seed, err, LAYER_TOL)


def _check_bn(seed: int, shape, training: bool, name: str) -> CheckResult:
    g = _gen(seed, name)
    x = g.standard_normal(shape) * 2 + 0.5
    c = shape[-1]
    gamma = g.uniform(0.5, 1.5, c)
    beta = g.standard_normal(c)
    mm, mv = g.standard_normal(c) * 0.1, g.uniform(0.5, 2.0, c)
    r = g.standard_normal(shape)

    def f():
        y, _ = L.batchnorm_forward(x, gamma, beta, mm, mv, training)
        return float((y * r).sum())

    _, cache = L.batchnorm_forward(x, gamma, beta, mm, mv, training)
    dx, dg, db = L.batchnorm_backward(r, gamma, cache)
    err = max(rel_error(dx, numeric_grad(f, x)), rel_error(dg, numeric_grad(f, gamma)),
              rel_error(db, numeric_grad(f, beta)))
    return CheckResult(name, seed, err, LAYER_TOL)


def check_batchnorm(seed: int) -> list[CheckResult]:
    return [_check_bn(seed, (3, 4, 4, 3), True, "batchnorm_train_nhwc"),
            _check_bn(seed, (6, 5), True, "batchnorm_train_dense"),
            _check_bn(seed, (2, 3, 3, 4), False, "batchnorm_eval")]


def check_maxpool(seed: int) -> CheckResult:
    g = _gen(seed, "maxpool")
    # a shuffled grid keeps every window's maximum at least 0.05 above the rest
    x = (g.permutation(2 * 6 * 6 * 2) * 0.05).reshape(2, 6, 6, 2)
    r = g.standard_normal((2, 3, 3, 2))
    f = lambda: float((L.maxpool2x2_forward(x)[0] * r).sum())
    _, arg = L.maxpool2x2_forward(x)
    dx = L.maxpool2x2_backward(r, arg, x.shape)
    return CheckResult("maxpool2x2", seed, rel_error(dx, numeric_grad(f, x)), LAYER_TOL)


def check_dropout(seed: int) -> CheckResult:
    g = _gen(seed, "dropout")
    x = g.standard_normal((4, 6))
    mask = L.dropout_mask(Rng(seed).fork("gradcheck"), x.shape, 0.2)
    r = g.standard_normal(x.shape)
    f = lambda: float((L.dropout_forward(x, mask, 0.2) * r).sum())
    dx = L.dropout_backward(r, mask, 0.2)
    return CheckResult("dropout", seed, rel_error(dx, numeric_grad(f, x)), LAYER_TOL)


def check_relu(seed: int) -> CheckResult:
    g = _gen(seed, "relu")
    x = _away_from_zero(g.standard_normal((3, 4, 4, 2)))
    r = g.standard_normal(x.shape)
    f = lambda: float((L.relu_forward(x) * r).sum())
    dx = L.relu_backward(r, x)
    return CheckResult("relu", seed, rel_error(dx, numeric_grad(f, x)), LAYER_TOL)


def check_flatten(seed: int) -> CheckResult:
    g = _gen(seed, "flatten")
    x = g.standard_normal((2, 3, 3, 2))
    r = g.standard_normal((2, 18))
    f = lambda: float((L.flatten_forward(x) * r).sum())
    dx = L.flatten_backward(r, x.shape)
    return CheckResult("flatten", seed, rel_error(dx, numeric_grad(f, x)), LAYER_TOL)


def check_dense(seed: int) -> CheckResult:
    g = _gen(seed, "dense")
    x = g.standard_normal((4, 6))
    w = g.standard_normal((6, 5))
    b = g.standard_normal(5)
    r = g.standard_normal((4, 5))
    f = lambda: float((L.dense_forward(x, w, b) * r).sum())
    dx, dw, db = L.dense_backward(x, w, r)
    err = max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)),
              rel_error(db, numeric_grad(f, b)))
    return CheckResult("dense", seed, err, LAYER_TOL)


def check_softmax(seed: int) -> CheckResult:
    g = _gen(seed, "softmax")
    z = g.standard_normal((3, 6)) * 2
    r = g.standard_normal(z.shape)
    f = lambda: float((L.softmax(z) * r).sum())
    dz = L.softmax_backward(r, L.softmax(z))
    return CheckResult("softmax", seed, rel_error(dz, numeric_grad(f, z)), LAYER_TOL)


def check_crossentropy(seed: int) -> CheckResult:
    g = _gen(seed, "crossentropy")
    z = g.standard_normal((2, 5)) * 2
    y = onehot(g.integers(0, 5, 2), 5, np.float64)
    f = lambda: crossentropy_from_logits(z, y)[0]
    _, dz = crossentropy_from_logits(z, y)
    return CheckResult("crossentropy", seed, rel_error(dz, numeric_grad(f, z)), LAYER_TOL)


def layer_checks(seed: int) -> list[CheckResult]:
    out = [check_conv2d(seed)]
    out += check_batchnorm(seed)
    out += [check_maxpool(seed), check_dropout(seed), check_relu(seed), check_flatten(seed),
            check_dense(seed), check_softmax(seed), check_crossentropy(seed)]
    return out


def _kink_signature(model) -> list[np.ndarray]:
    """ReLU on/off masks and max-pool argmaxes of the last forward."""
    sig = []
    for layer in model.layers:
        if isinstance(layer, (L.Conv2D, L.Dense)) and layer.activation == "relu":
            sig.append(np.packbits(layer._cache[1] > 0))
        elif isinstance(layer, L.MaxPool2D):
            sig.append(layer._cache[0].astype(np.uint8))
    return sig


def _same_signature(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def check_full_stack(seed: int, num_classes: int = 30, batch: int = 2, samples: int = 20,
                     max_draws: int = 2000) -> CheckResult:
    """Whole network in train mode with a frozen dropout mask; gradients of
    the mean cross-entropy w.r.t. ``samples`` randomly chosen scalars.

    A draw only counts when neither +h nor -h flips a ReLU or moves a pooling
    argmax; across a kink the central difference is not a derivative estimate.
    """
    cfg = ModelConfig(num_classes=num_classes, seed=seed)
    model = build_model(cfg, Rng(seed), dtype=np.float64)
    g = _gen(seed, "full_stack")
    x = g.uniform(0, 1, (batch, cfg.input_h, cfg.input_w, cfg.input_c))
    y = onehot(g.integers(0, num_classes, batch), num_classes, np.float64)
    drop = next(l for l in model.layers if isinstance(l, L.Dropout))
    model.forward(x, training=True, rng=Rng(seed).fork("dropout"))
    drop.frozen_mask = drop.last_mask
    base = _kink_signature(model)

    _, dlogits = crossentropy_from_logits(model.logits, y)
    analytic = model.backward(dlogits)

    def loss() -> float:
        model.forward(x, training=True)
        return crossentropy_from_logits(model.logits, y)[0]

    params = model.parameters()
    names = list(params)
    a_vals, n_vals, rejected = [], [], 0
    for _ in range(max_draws):
        if len(a_vals) == samples:
            break
        name = names[g.integers(len(names))]
        p = params[name]
        idx = tuple(int(g.integers(d)) for d in p.shape)
        old = p[idx]
        p[idx] = old + H
        fp = loss()
        smooth = _same_signature(base, _kink_signature(model))
        p[idx] = old - H
        fm = loss()
        smooth = smooth and _same_signature(base, _kink_signature(model))
        p[idx] = old
        if not smooth:
            rejected += 1
            continue
        a_vals.append(analytic[name][idx])
        n_vals.append((fp - fm) / (2 * H))
    if len(a_vals) < samples:
        return CheckResult("full_stack", seed, float("inf"), STACK_TOL,
                           f"only {len(a_vals)} kink-free draws in {max_draws}")
    err = rel_error(np.array(a_vals), np.array(n_vals))
    return CheckResult("full_stack", seed, err, STACK_TOL, f"{samples} params, {rejected} kink draws skipped")


def run_all(seeds=(0, 1, 2), full_stack: bool = True) -> list[CheckResult]:
    results = []
    for s in seeds:
        results += layer_checks(s)
        if full_stack:
            results.append(check_full_stack(s))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'check':<24}{'seed':>6}{'max rel err':>14}{'tol':>10}  status"]
    for r in results:
        lines.append(f"{r.name:<24}{r.seed:>6}{r.max_rel_error:>14.3e}{r.tol:>10.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}" + (f"  ({r.note})" if r.note else ""))
    return "\n".join(lines)
