"""Confusion matrix and the accuracy / macro precision / recall / F1 set."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LabelError, StateError


@dataclass(frozen=True)
class ClassScore:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: tuple[ClassScore, ...]

    def rows(self) -> list[tuple[str, float]]:
        out = [("accuracy", self.accuracy), ("macro_precision", self.macro_precision),
               ("macro_recall", self.macro_recall), ("macro_f1", self.macro_f1)]
        for c in self.per_class:
            out += [(f"precision_{c.name}", c.precision), (f"recall_{c.name}", c.recall),
                    (f"f1_{c.name}", c.f1)]
        return out


class ConfusionMatrix:
    """Counts indexed [true, predicted]."""

    def __init__(self, num_classes: int, class_names=None):
        if num_classes < 1:
            raise LabelError("confusion matrix needs at least one class")
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        names = list(class_names) if class_names is not None else [str(i) for i in range(num_classes)]
        if len(names) != num_classes:
            raise LabelError(f"{len(names)} class names for {num_classes} classes")
        self.class_names = names

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, true_label: int, predicted_label: int) -> "ConfusionMatrix":
        c = self.num_classes
        if not (0 <= true_label < c and 0 <= predicted_label < c):
            raise LabelError(f"label out of range [0, {c}): true={true_label}, pred={predicted_label}")
        self.counts[true_label, predicted_label] += 1
        return self

    def update_batch(self, true_labels, predicted_labels) -> "ConfusionMatrix":
        t = np.asarray(true_labels, dtype=np.int64)
        p = np.asarray(predicted_labels, dtype=np.int64)
        c = self.num_classes
        if t.shape != p.shape:
            raise LabelError("true and predicted label arrays differ in length")
        if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= c):
            raise LabelError(f"label out of range [0, {c})")
        np.add.at(self.counts, (t, p), 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.counts.shape != self.counts.shape:
            raise LabelError("cannot merge confusion matrices of different sizes")
        out = ConfusionMatrix(self.num_classes, self.class_names)
        out.counts = self.counts + other.counts
        return out

    def metrics(self) -> MetricReport:
        return compute_metrics(self)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([""] + self.class_names)
            for name, row in zip(self.class_names, self.counts):
                w.writerow([name] + [int(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ConfusionMatrix":
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        names = rows[0][1:]
        cm = cls(len(names), names)
        cm.counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
        return cm


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(cm: ConfusionMatrix) -> MetricReport:
    total = cm.total
    if total < 1:
        raise StateError("metrics need at least one evaluated sample")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    precision = _safe_div(tp, counts.sum(axis=0))
    recall = _safe_div(tp, counts.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    per_class = tuple(
        ClassScore(n, float(p), float(r), float(f), int(s))
        for n, p, r, f, s in zip(cm.class_names, precision, recall, f1, cm.counts.sum(axis=1)))
    return MetricReport(
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class=per_class,
    )


def write_metrics_csv(report: MetricReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in report.rows():
            w.writerow([k, repr(float(v))])
    return path
