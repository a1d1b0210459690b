"""Training loop, evaluation and single-image prediction."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .augment import AugmentPlan
from .data import Dataset, load_image
from .errors import ConfigError, InputError, ParameterError
from .metrics import ConfusionMatrix, MetricReport, compute_metrics
from .model import Model, ModelConfig, build_model, save_weights
from .optim import (AdamHyper, OptimizerState, RmsPropHyper, adam_step,
                    crossentropy_from_logits, onehot, rmsprop_step)
from .tensor import Rng

log = logging.getLogger(__name__)

DEFAULT_LR = {"rmsprop": 0.001, "adam": 0.01}
HISTORY_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    optimizer: str = "rmsprop"
    learning_rate: float | None = None
    seed: int = 0
    num_classes: int = 29
    augment: AugmentPlan | None = None
    out_dir: Path | None = None
    checkpoint_every: int = 0
    drop_last: bool = False
    # wall-clock seconds make history.csv non-reproducible; off writes 0.0
    record_time: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in DEFAULT_LR:
            raise ConfigError(f"optimizer must be one of {sorted(DEFAULT_LR)}, got {self.optimizer!r}")
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LR[self.optimizer]
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    def hyper(self):
        if self.optimizer == "adam":
            return AdamHyper(alpha=self.learning_rate)
        return RmsPropHyper(alpha=self.learning_rate)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    wall_seconds: float


@dataclass
class EvalResult:
    loss: float
    confusion: ConfusionMatrix
    report: MetricReport

    @property
    def accuracy(self) -> float:
        return self.report.accuracy


def iterate_batches(n: int, batch_size: int, order: np.ndarray, drop_last: bool = False):
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        if drop_last and len(idx) < batch_size:
            return
        yield idx


def _check_sets(cfg: TrainConfig, train_set: Dataset, val_set: Dataset | None):
    if train_set is None or len(train_set) == 0:
        raise ConfigError("training set is empty")
    if cfg.batch_size > len(train_set):
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds training set size {len(train_set)}")
    for ds in (train_set, val_set):
        if ds is not None and len(ds) and ds.labels.max() >= cfg.num_classes:
            raise ConfigError(f"dataset has label {ds.labels.max()} but num_classes={cfg.num_classes}")


def train(cfg: TrainConfig, train_set: Dataset, val_set: Dataset | None = None,
          model: Model | None = None,
          callback: Callable[[EpochRecord], bool | None] | None = None) -> tuple[Model, list[EpochRecord]]:
    """Mini-batch training. ``callback`` sees each EpochRecord and may return
    True to stop early (used by tests; the CLI never stops early)."""
    _check_sets(cfg, train_set, val_set)
    run = Rng(cfg.seed)
    if model is None:
        model = build_model(ModelConfig(num_classes=cfg.num_classes, seed=cfg.seed), run)
    elif model.cfg.num_classes != cfg.num_classes:
        raise ConfigError(f"model has {model.cfg.num_classes} classes, config {cfg.num_classes}")
    step = adam_step if cfg.optimizer == "adam" else rmsprop_step
    hyper = cfg.hyper()
    state = OptimizerState()
    params = model.parameters()
    n = len(train_set)
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = run.fork("shuffle").fork(epoch).permutation(n)
        drop_rng = run.fork("dropout").fork(epoch)
        loss_sum, correct, seen = 0.0, 0, 0
        for b, idx in enumerate(iterate_batches(n, cfg.batch_size, order, cfg.drop_last)):
            x = train_set.images[idx]
            y = train_set.labels[idx]
            probs = model.forward(x, training=True, rng=drop_rng.fork(b))
            loss, g = crossentropy_from_logits(model.logits, onehot(y, cfg.num_classes, model.dtype))
            grads = model.backward(g)
            step(params, grads, state, hyper)
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y).sum())
            seen += len(idx)
        if val_set is not None and len(val_set):
            ev = evaluate(model, val_set, batch_size=cfg.batch_size)
            val_loss, val_acc = ev.loss, ev.accuracy
        else:
            val_loss = val_acc = math.nan
        secs = time.perf_counter() - t0 if cfg.record_time else 0.0
        rec = EpochRecord(epoch, loss_sum / seen, correct / seen, val_loss, val_acc, secs)
        history.append(rec)
        log.info("epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f (%.1fs)",
                 epoch, rec.train_loss, rec.train_accuracy, val_loss, val_acc, secs)
        if cfg.out_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
            save_weights(model, Path(cfg.out_dir) / f"model_epoch{epoch:04d}.aslw")
        if callback is not None and callback(rec):
            break
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_weights(model, out / "model.aslw")
        write_history(history, out / "history.csv")
    return model, history


def write_history(history: list[EpochRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.epoch] + [repr(float(v)) for v in
                                    (r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.wall_seconds)])
    return path


def read_history(path) -> list[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                        float(r["val_loss"]), float(r["val_acc"]), float(r["seconds"])) for r in rows]


def evaluate(model: Model, ds: Dataset, batch_size: int = 128) -> EvalResult:
    """Eval-mode pass in dataset order; argmax ties resolve to the lowest index."""
    if ds is None or len(ds) == 0:
        raise InputError("cannot evaluate an empty dataset")
    c = model.cfg.num_classes
    if ds.labels.max() >= c:
        raise InputError(f"dataset label {ds.labels.max()} outside model's {c} classes")
    names = ds.class_names if len(ds.class_names) == c else None
    cm = ConfusionMatrix(c, names)
    loss_sum = 0.0
    for s in range(0, len(ds), batch_size):
        x = ds.images[s:s + batch_size]
        y = ds.labels[s:s + batch_size]
        probs = model.forward(x, training=False)
        loss, _ = crossentropy_from_logits(model.logits, onehot(y, c, model.dtype))
        loss_sum += loss * len(y)
        cm.update_batch(y, probs.argmax(axis=1))
    return EvalResult(loss_sum / len(ds), cm, compute_metrics(cm))


def rank_probabilities(probs: np.ndarray, class_names: list[str], top_k: int) -> list[tuple[str, float]]:
    c = len(probs)
    if not 1 <= top_k <= c:
        raise ParameterError(f"top_k must lie in [1, {c}], got {top_k}")
    order = np.argsort(-probs, kind="stable")[:top_k]
    return [(class_names[i], float(probs[i])) for i in order]


def predict(model: Model, image_path, top_k: int = 5, class_names: list[str] | None = None,
            crop: bool = False) -> list[tuple[str, float]]:
    c = model.cfg.num_classes
    names = class_names if class_names is not None else [str(i) for i in range(c)]
    if len(names) != c:
        raise ParameterError(f"{len(names)} class names for a {c}-class model")
    if not 1 <= top_k <= c:
        raise ParameterError(f"top_k must lie in [1, {c}], got {top_k}")
    img = load_image(image_path, (model.cfg.input_h, model.cfg.input_w), crop)
    probs = model.forward(img[None], training=False)[0]
    return rank_probabilities(probs, names, top_k)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["out_dir"] = str(cfg.out_dir) if cfg.out_dir else None
    return d
