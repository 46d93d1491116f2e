"""Confusion matrix and the per-class precision/recall/F1 report."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ArgumentError, ShapeError

CLASS_NAMES = ("parasitized", "uninfected")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[actual][predicted]
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False  # some denominator was zero; metrics forced to 0


@dataclass
class ClassificationReport:
    classes: list[ClassMetrics]
    accuracy: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "classes": [
                {
                    "name": c.name,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                }
                for c in self.classes
            ],
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def confusion(labels: Sequence[int], preds: Sequence[int], class_names=CLASS_NAMES) -> ConfusionMatrix:
    """counts[a][p] = |{i : labels_i = a and preds_i = p}|."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if labels.shape != preds.shape or labels.ndim != 1:
        raise ShapeError(
            f"labels and preds must be equal-length 1-d, got {labels.shape} and {preds.shape}"
        )
    k = len(class_names)
    for name, arr in (("labels", labels), ("preds", preds)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ArgumentError(f"{name} contain values outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def report(cm: ConfusionMatrix) -> ClassificationReport:
    """Per-class precision/recall/F1 plus overall accuracy.

    A zero denominator yields metric 0 with the class's degenerate flag set,
    keeping the report total for any input distribution.
    """
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise ArgumentError("cannot report on an empty confusion matrix")
    classes = []
    for k, name in enumerate(cm.class_names):
        tp = int(counts[k, k])
        col = int(counts[:, k].sum())
        row = int(counts[k, :].sum())
        degenerate = False
        if col > 0:
            precision = tp / col
        else:
            precision, degenerate = 0.0, True
        if row > 0:
            recall = tp / row
        else:
            recall, degenerate = 0.0, True
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1, degenerate = 0.0, True
        classes.append(
            ClassMetrics(
                name=name, precision=precision, recall=recall, f1=f1,
                support=row, degenerate=degenerate,
            )
        )
    accuracy = float(np.trace(counts)) / total
    return ClassificationReport(classes=classes, accuracy=accuracy, confusion=counts.copy())


def render_table(rep: ClassificationReport) -> str:
    """Fixed-width text table: per-class rows, then the accuracy line."""
    header = f"{'Class':<14}{'Precision':>10}{'Recall':>8}{'F1-Score':>10}{'Support':>9}"
    lines = [header, "-" * len(header)]
    for c in rep.classes:
        lines.append(
            f"{c.name.capitalize():<14}{c.precision:>10.3f}{c.recall:>8.3f}"
            f"{c.f1:>10.3f}{c.support:>9d}"
        )
    total = sum(c.support for c in rep.classes)
    lines.append("-" * len(header))
    lines.append(f"{'Accuracy':<14}{'':>10}{'':>8}{rep.accuracy:>10.3f}{total:>9d}")
    return "\n".join(lines)
