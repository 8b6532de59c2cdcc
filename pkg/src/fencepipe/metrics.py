"""Classification and segmentation metrics.

Mask metrics take hard binary masks only; thresholding soft maps is the
caller's job (see detect.binarize). Report values stay full precision in
memory and are rounded only when serialised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, EmptyInputError


@dataclass
class ConfusionMatrix:
    """counts[i][j] = samples whose actual class is classes[i], predicted classes[j]."""

    classes: tuple[str, ...]
    counts: np.ndarray

    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassReport:
    classes: tuple[str, ...]
    per_class: dict[str, ClassScores]
    accuracy: float
    macro: ClassScores
    weighted: ClassScores
    flags: tuple[str, ...] = ()

    def to_dict(self, ndigits: int = 2) -> dict:
        """sklearn-style nested dict; per-class scores rounded to ndigits,
        accuracy to 4 places."""

        def row(s: ClassScores) -> dict:
            return {
                "precision": round(s.precision, ndigits),
                "recall": round(s.recall, ndigits),
                "f1-score": round(s.f1, ndigits),
                "support": s.support,
            }

        out: dict = {name: row(s) for name, s in self.per_class.items()}
        out["accuracy"] = round(self.accuracy, 4)
        out["macro avg"] = row(self.macro)
        out["weighted avg"] = row(self.weighted)
        if self.flags:
            out["flags"] = list(self.flags)
        return out


def confusion_matrix(actual, predicted, classes) -> ConfusionMatrix:
    classes = tuple(classes)
    if len(classes) < 2:
        raise DimensionError(f"confusion_matrix: need >= 2 classes, got {len(classes)}")
    actual = list(actual)
    predicted = list(predicted)
    if len(actual) != len(predicted):
        raise DimensionError(
            f"confusion_matrix: {len(actual)} actual vs {len(predicted)} predicted labels"
        )
    if not actual:
        raise EmptyInputError("confusion_matrix: no samples")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for a, p in zip(actual, predicted):
        if a not in index:
            raise DataError(f"confusion_matrix: unknown actual label {a!r}")
        if p not in index:
            raise DataError(f"confusion_matrix: unknown predicted label {p!r}")
        counts[index[a], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def class_report(cm: ConfusionMatrix) -> ClassReport:
    """Per-class precision/recall/F1 plus accuracy, macro and support-weighted
    averages. Zero-denominator scores are reported as 0 and flagged."""
    counts = np.asarray(cm.counts, dtype=np.int64)
    if counts.shape != (len(cm.classes),) * 2:
        raise DimensionError(
            f"class_report: counts shape {counts.shape} does not match {len(cm.classes)} classes"
        )
    total = int(counts.sum())
    if total == 0:
        raise EmptyInputError("class_report: empty confusion matrix")

    flags: list[str] = []
    per_class: dict[str, ClassScores] = {}
    for i, name in enumerate(cm.classes):
        tp = int(counts[i, i])
        col = int(counts[:, i].sum())
        row = int(counts[i, :].sum())
        if col > 0:
            precision = tp / col
        else:
            precision = 0.0
            flags.append(f"precision[{name}]: zero denominator")
        if row > 0:
            recall = tp / row
        else:
            recall = 0.0
            flags.append(f"recall[{name}]: zero denominator")
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            flags.append(f"f1[{name}]: zero denominator")
        per_class[name] = ClassScores(precision, recall, f1, row)

    accuracy = float(np.trace(counts)) / total
    ps = [s.precision for s in per_class.values()]
    rs = [s.recall for s in per_class.values()]
    fs = [s.f1 for s in per_class.values()]
    supports = [s.support for s in per_class.values()]
    n = len(cm.classes)
    macro = ClassScores(sum(ps) / n, sum(rs) / n, sum(fs) / n, total)
    weighted = ClassScores(
        sum(p * s for p, s in zip(ps, supports)) / total,
        sum(r * s for r, s in zip(rs, supports)) / total,
        sum(f * s for f, s in zip(fs, supports)) / total,
        total,
    )
    return ClassReport(cm.classes, per_class, accuracy, macro, weighted, tuple(flags))


def _hard_pair(gt, pred, op: str) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise DimensionError(f"{op}: shape mismatch {gt.shape} vs {pred.shape}")
    if gt.size == 0:
        raise EmptyInputError(f"{op}: empty masks")
    g = gt.astype(np.float64)
    p = pred.astype(np.float64)
    for name, m in (("gt", g), ("pred", p)):
        if not np.isin(m, (0.0, 1.0)).all():
            raise DataError(f"{op}: {name} mask must be hard binary (values 0/1)")
    return g.astype(bool), p.astype(bool)


def iou(gt, pred) -> float:
    """Intersection over union = tp / (tp + fp + fn); two empty masks give 1.0."""
    g, p = _hard_pair(gt, pred, "iou")
    union = int(np.logical_or(g, p).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(g, p).sum()) / union


def miou(gt, pred) -> float:
    """Mean IoU over the foreground and background classes."""
    g, p = _hard_pair(gt, pred, "miou")
    return 0.5 * (iou(g, p) + iou(~g, ~p))


def dice(gt, pred) -> float:
    """Dice coefficient = 2*tp / (2*tp + fp + fn); two empty masks give 1.0."""
    g, p = _hard_pair(gt, pred, "dice")
    denom = int(g.sum()) + int(p.sum())
    if denom == 0:
        return 1.0
    return 2.0 * float(np.logical_and(g, p).sum()) / denom


def pixel_accuracy(gt, pred) -> float:
    g, p = _hard_pair(gt, pred, "pixel_accuracy")
    return float((g == p).mean())


def segmentation_scores(gt, pred) -> dict:
    """MIoU, pixel accuracy and Dice for one hard mask pair."""
    return {
        "miou": miou(gt, pred),
        "accuracy": pixel_accuracy(gt, pred),
        "dice": dice(gt, pred),
    }
