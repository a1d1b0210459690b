"""Adam and RMSProp updates, and softmax cross-entropy with its fused gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, ParameterError, StateError


@dataclass(frozen=True)
class AdamHyper:
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError("adam alpha must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ParameterError("adam epsilon must be > 0")


@dataclass(frozen=True)
class RmsPropHyper:
    alpha: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError("rmsprop alpha must be > 0")
        if not 0 <= self.rho < 1:
            raise ParameterError("rmsprop rho must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ParameterError("rmsprop epsilon must be > 0")


@dataclass
class OptimizerState:
    """Per-parameter accumulators keyed by parameter name."""
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _check(params, grads, state: OptimizerState, need_m: bool):
    if params.keys() != grads.keys():
        raise StateError(f"parameter/gradient names differ: {sorted(params)} vs {sorted(grads)}")
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise StateError(f"{k}: gradient shape {grads[k].shape} != parameter shape {p.shape}")
        accs = [state.v] + ([state.m] if need_m else [])
        for acc in accs:
            if k not in acc:
                acc[k] = np.zeros_like(p)
            elif acc[k].shape != p.shape:
                raise StateError(f"{k}: optimizer state shape {acc[k].shape} != {p.shape}")


def adam_step(params: dict, grads: dict, state: OptimizerState, h: AdamHyper) -> OptimizerState:
    """In-place Adam update of every array in ``params``."""
    _check(params, grads, state, need_m=True)
    state.t += 1
    t = state.t
    c1 = 1.0 - h.beta1 ** t
    c2 = 1.0 - h.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= h.beta1
        m += (1 - h.beta1) * g
        v *= h.beta2
        v += (1 - h.beta2) * g * g
        p -= (h.alpha * (m / c1) / (np.sqrt(v / c2) + h.epsilon)).astype(p.dtype, copy=False)
    return state


def rmsprop_step(params: dict, grads: dict, state: OptimizerState, h: RmsPropHyper) -> OptimizerState:
    """In-place RMSProp update: v <- rho*v + (1-rho)*g^2, p -= alpha*g/(sqrt(v)+eps)."""
    _check(params, grads, state, need_m=False)
    state.t += 1
    for k, p in params.items():
        g = grads[k]
        v = state.v[k]
        v *= h.rho
        v += (1 - h.rho) * g * g
        p -= (h.alpha * g / (np.sqrt(v) + h.epsilon)).astype(p.dtype, copy=False)
    return state


def onehot(labels, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def crossentropy_from_logits(logits: np.ndarray, onehot_labels: np.ndarray):
    """Mean categorical cross-entropy. Returns (loss, d loss / d logits)."""
    if logits.shape != onehot_labels.shape or logits.ndim != 2:
        raise LabelError(f"logits {logits.shape} and one-hot {onehot_labels.shape} must be equal [N,C]")
    y = onehot_labels
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise LabelError("each one-hot row needs exactly one 1 and zeros elsewhere")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = float(-(logp * y).sum() / n)
    grad = (np.exp(logp) - y) / n
    return loss, grad.astype(logits.dtype, copy=False)
