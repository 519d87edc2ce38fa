"""Weighted F1, per-class precision/recall/F1 and the confusion matrix.

Zero-denominator convention: precision, recall, and F1 are all 0.0 when
their denominator is 0. Weighted F1 averages the per-class F1 scores with
weights proportional to gold-class support.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True, eq=False)
class MetricsReport:
    weighted_f1: float
    per_class: tuple[ClassMetrics, ...]
    confusion: np.ndarray   # (d, d) int64, rows = gold, cols = predicted
    total: int

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion)) / self.total

    @property
    def macro_f1(self) -> float:
        return float(np.mean([c.f1 for c in self.per_class]))


def weighted_f1(preds: Sequence[int], golds: Sequence[int], num_classes: int) -> MetricsReport:
    preds = np.asarray(preds, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if preds.shape != golds.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError(f"need equal-length non-empty label sequences, got {preds.shape} vs {golds.shape}")
    for name, arr in (("preds", preds), ("golds", golds)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{name} contain labels outside [0, {num_classes})")

    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (golds, preds), 1)

    total = int(preds.size)
    per_class = []
    weighted = 0.0
    for c in range(num_classes):
        tp = int(confusion[c, c])
        predicted = int(confusion[:, c].sum())
        support = int(confusion[c, :].sum())
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / support if support > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(ClassMetrics(precision=precision, recall=recall, f1=f1, support=support))
        weighted += support / total * f1

    return MetricsReport(weighted_f1=weighted, per_class=tuple(per_class),
                         confusion=confusion, total=total)


def format_report(report: MetricsReport, label_names: Sequence[str] | None = None) -> str:
    """Aligned human-readable table for a metrics report."""
    d = len(report.per_class)
    names = list(label_names) if label_names is not None else [f"class{c}" for c in range(d)]
    width = max(len(n) for n in names + ["weighted F1"])
    lines = [f"{'':<{width}}  precision  recall      f1  support"]
    for name, cm in zip(names, report.per_class):
        lines.append(f"{name:<{width}}  {cm.precision:9.4f}  {cm.recall:6.4f}  {cm.f1:6.4f}  {cm.support:7d}")
    lines.append("")
    lines.append(f"{'accuracy':<{width}}  {report.accuracy:.4f} on {report.total} utterances")
    lines.append(f"{'weighted F1':<{width}}  {report.weighted_f1:.4f}")
    return "\n".join(lines)
