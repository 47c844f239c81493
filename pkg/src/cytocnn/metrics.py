"""Confusion matrix and derived measures: accuracy, one-vs-rest
precision/recall/F1 per class, and their unweighted macro means.

0/0 cases yield 0.0 with an explicit undefined flag so reports stay total.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class ConfusionMatrix:
    """counts[t][p] = number of samples with true class t predicted as p."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValidationError("confusion matrix entries must be non-negative")

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    precision_undefined: list[bool]
    recall_undefined: list[bool]
    f1_undefined: list[bool]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    class_names: list[str] = field(default_factory=list)


def confusion(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValidationError(
            f"preds and labels must be equal-length 1-d, got {preds.shape} and {labels.shape}")
    if num_classes < 1:
        raise ValidationError(f"num_classes must be >= 1, got {num_classes}")
    for name, a in (("preds", preds), ("labels", labels)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise ValidationError(f"{name} contain values outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValidationError("cannot compute accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def per_class_prf(cm: ConfusionMatrix):
    """One-vs-rest (precision, recall, f1, support, undefined flags) per class.

    For class c: TP = counts[c][c], FP = column c - TP, FN = row c - TP.
    """
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    support = c.sum(axis=1).astype(np.int64)

    p_undef = (tp + fp) == 0
    r_undef = (tp + fn) == 0
    precision = np.where(p_undef, 0.0, tp / np.where(p_undef, 1.0, tp + fp))
    recall = np.where(r_undef, 0.0, tp / np.where(r_undef, 1.0, tp + fn))
    f_undef = (precision + recall) == 0
    f1 = np.where(f_undef, 0.0,
                  2.0 * precision * recall / np.where(f_undef, 1.0, precision + recall))
    return (precision, recall, f1, support,
            p_undef.astype(bool), r_undef.astype(bool), f_undef.astype(bool))


def macro(report: MetricsReport) -> tuple[float, float, float]:
    """Unweighted class means, counting flagged-zero classes."""
    return (float(np.mean(report.precision)), float(np.mean(report.recall)),
            float(np.mean(report.f1)))


def build_report(cm: ConfusionMatrix, class_names: list[str] | None = None) -> MetricsReport:
    precision, recall, f1, support, pu, ru, fu = per_class_prf(cm)
    report = MetricsReport(
        accuracy=accuracy(cm),
        precision=[float(x) for x in precision],
        recall=[float(x) for x in recall],
        f1=[float(x) for x in f1],
        support=[int(x) for x in support],
        precision_undefined=[bool(x) for x in pu],
        recall_undefined=[bool(x) for x in ru],
        f1_undefined=[bool(x) for x in fu],
        macro_precision=0.0, macro_recall=0.0, macro_f1=0.0,
        class_names=list(class_names) if class_names else
        [str(i) for i in range(cm.num_classes)],
    )
    report.macro_precision, report.macro_recall, report.macro_f1 = macro(report)
    return report


def render_report(report: MetricsReport, fmt: str = "text") -> str:
    """Deterministic serialization; 'structured' is JSON and parses back exactly."""
    if fmt == "structured":
        payload = {
            "accuracy": report.accuracy,
            "classes": [
                {
                    "name": report.class_names[i],
                    "precision": report.precision[i],
                    "recall": report.recall[i],
                    "f1": report.f1[i],
                    "support": report.support[i],
                    "undefined": {
                        "precision": report.precision_undefined[i],
                        "recall": report.recall_undefined[i],
                        "f1": report.f1_undefined[i],
                    },
                }
                for i in range(len(report.class_names))
            ],
            "macro": {
                "precision": report.macro_precision,
                "recall": report.macro_recall,
                "f1": report.macro_f1,
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if fmt != "text":
        raise ValidationError(f"unknown report format {fmt!r}")

    width = max(len("class"), len("macro"), *(len(n) for n in report.class_names))
    lines = [f"accuracy: {report.accuracy:.6f}",
             f"{'class':<{width}}  support  precision  recall    f1"]
    for i, name in enumerate(report.class_names):
        flags = "".join("*" if u else " " for u in (report.precision_undefined[i],
                                                    report.recall_undefined[i],
                                                    report.f1_undefined[i]))
        lines.append(f"{name:<{width}}  {report.support[i]:>7}  {report.precision[i]:.6f}"
                     f"   {report.recall[i]:.6f}  {report.f1[i]:.6f}  {flags.rstrip()}")
    lines.append(f"{'macro':<{width}}  {'-':>7}  {report.macro_precision:.6f}"
                 f"   {report.macro_recall:.6f}  {report.macro_f1:.6f}")
    if any(report.precision_undefined + report.recall_undefined + report.f1_undefined):
        lines.append("(* metric was 0/0 and reported as 0)")
    return "\n".join(lines) + "\n"
