"""Classification metrics: confusion matrix, precision/recall/F1 and one-vs-rest ROC AUC."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import N_CLASSES


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


def accuracy_from_counts(tp: float, tn: float, fp: float, fn: float) -> float:
    return (tp + tn) / (tp + tn + fp + fn)


def precision_from_counts(tp: float, fp: float) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall_from_counts(tp: float, fn: float) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def f1_from_counts(tp: float, fp: float, fn: float) -> float:
    p, r = precision_from_counts(tp, fp), recall_from_counts(tp, fn)
    return 2 * p * r / (p + r) if p + r else 0.0


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true labels, columns predictions."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def one_vs_rest_counts(cm: np.ndarray, c: int) -> tuple[int, int, int, int]:
    """(TP, TN, FP, FN) for class ``c`` taken as positive."""
    tp = int(cm[c, c])
    fp = int(cm[:, c].sum() - tp)
    fn = int(cm[c, :].sum() - tp)
    tn = int(cm.sum() - tp - fp - fn)
    return tp, tn, fp, fn


def roc_curve(positive: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) points from sweeping a threshold down through the distinct scores.

    Tied scores move together, so a block of ties contributes a diagonal step.
    """
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    order = np.argsort(-scores, kind="stable")
    s, pos = scores[order], positive[order]
    # last index of each run of equal scores
    cut = np.flatnonzero(np.diff(s) != 0)
    ends = np.r_[cut, len(s) - 1]
    tps = np.cumsum(pos)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos] if n_pos else np.r_[0.0, np.zeros(len(ends))]
    fpr = np.r_[0.0, fps / n_neg] if n_neg else np.r_[0.0, np.zeros(len(ends))]
    return fpr, tpr


def auc_trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


@dataclass
class EvaluationMetrics:
    confusion: np.ndarray
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float
    auc: list[float]  # NaN where a class is absent from y_true (or is all of it)
    macro_auc: float
    inference_seconds_per_window: float | None = None
    n_samples: int = 0
    classes_present: list[int] = field(default_factory=list)

    def counts(self, c: int) -> tuple[int, int, int, int]:
        return one_vs_rest_counts(self.confusion, c)

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "macro_auc": clean(self.macro_auc),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": [clean(a) for a in self.auc],
            "confusion_matrix": self.confusion.tolist(),
            "inference_seconds_per_window": self.inference_seconds_per_window,
        }


def compute_metrics(y_true, y_pred, scores=None, n_classes: int = N_CLASSES,
                    inference_seconds_per_window: float | None = None) -> EvaluationMetrics:
    """Accuracy, per-class and macro F1, and per-class / macro one-vs-rest AUC.

    Macro F1 averages over classes that occur in ``y_true`` or ``y_pred``;
    macro AUC averages over classes with both positives and negatives in
    ``y_true``. Without ``scores`` the AUC fields are NaN.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) != len(y_pred) or (scores is not None and len(scores) != len(y_true)):
        raise LengthMismatch("y_true, y_pred and scores must have equal length")
    if len(y_true) == 0:
        raise EmptyInput("no samples")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    precision, recall, f1 = [], [], []
    for c in range(n_classes):
        tp, _, fp, fn = one_vs_rest_counts(cm, c)
        precision.append(precision_from_counts(tp, fp))
        recall.append(recall_from_counts(tp, fn))
        f1.append(f1_from_counts(tp, fp, fn))
    seen = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    macro_f1 = float(np.mean([f1[c] for c in seen]))

    auc = [math.nan] * n_classes
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        for c in range(n_classes):
            positive = y_true == c
            if positive.any() and not positive.all():
                fpr, tpr = roc_curve(positive, scores[:, c])
                auc[c] = auc_trapezoid(fpr, tpr)
    valid = [a for a in auc if not math.isnan(a)]
    macro_auc = float(np.mean(valid)) if valid else math.nan

    return EvaluationMetrics(
        confusion=cm,
        accuracy=float(np.trace(cm) / cm.sum()),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro_f1,
        auc=auc,
        macro_auc=macro_auc,
        inference_seconds_per_window=inference_seconds_per_window,
        n_samples=int(len(y_true)),
        classes_present=sorted(set(y_true.tolist())),
    )


def format_confusion_table(cm: np.ndarray, names: list[str]) -> str:
    width = max(6, *(len(n) for n in names)) + 1
    header = " " * width + "".join(f"{n[:width - 1]:>{width}}" for n in names)
    lines = [header]
    for name, row in zip(names, cm):
        lines.append(f"{name:<{width}}" + "".join(f"{int(v):>{width}}" for v in row))
    return "\n".join(lines)
