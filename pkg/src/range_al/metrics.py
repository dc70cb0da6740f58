"""Evaluation metrics: mIoU, labeling efficiency, and stability diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadClassId, BadParam, LevelUnreachable, UndefinedMetric
from .projection import IGNORE
from .uncertainty import HeuristicKind, bald_map, variance_map


@dataclass
class ConfusionMatrix:
    """counts[target][predicted] over valid, non-ignore pixels."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def add(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred: np.ndarray, target: np.ndarray, valid: np.ndarray, num_classes: int) -> ConfusionMatrix:
    """Accumulate a confusion matrix, skipping invalid and ignore-labeled pixels."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape or pred.shape != np.asarray(valid).shape:
        raise BadParam("pred/target/valid shapes differ")
    keep = np.asarray(valid, dtype=bool) & (target != IGNORE)
    p, t = pred[keep].astype(np.int64), target[keep].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= num_classes):
        raise BadClassId("prediction outside [0, C)")
    if t.size and (t.min() < 0 or t.max() >= num_classes):
        raise BadClassId("target outside [0, C)")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def mean_iou(m: ConfusionMatrix) -> float:
    """Mean over classes of TP / (TP + FP + FN); zero-union classes are excluded."""
    c = m.counts.astype(np.float64)
    tp = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - tp
    present = union > 0
    if not np.any(present):
        raise UndefinedMetric("every class has zero union")
    return float((tp[present] / union[present]).mean())


@dataclass
class LearningCurve:
    """(n_labeled, miou) points with strictly increasing label counts."""

    points: list = field(default_factory=list)

    def __post_init__(self):
        ns = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise BadParam("n_labeled must be strictly increasing")


def n_labeled_at(curve: LearningCurve, level: float) -> float:
    """Label count at which the curve first reaches `level`, linearly interpolated."""
    pts = curve.points
    for i, (n, miou) in enumerate(pts):
        if miou >= level:
            if i == 0:
                return float(n)
            n0, m0 = pts[i - 1]
            return float(n0) + (level - m0) / (miou - m0) * (float(n) - float(n0))
    raise LevelUnreachable(f"curve never reaches mIoU {level}")


def labeling_efficiency(baseline: LearningCurve, other: LearningCurve, level: float) -> float:
    """n_baseline(level) / n_other(level); above 1 means `other` needs fewer labels."""
    return n_labeled_at(baseline, level) / n_labeled_at(other, level)


def mean_uncertainty_over_set(tensors, kind: HeuristicKind) -> float:
    """Mean per-pixel variance or BALD over all valid pixels of all samples."""
    if kind is HeuristicKind.VARIANCE:
        fn = variance_map
    elif kind is HeuristicKind.BALD:
        fn = bald_map
    else:
        raise BadParam(f"{kind} is not a stability metric")
    tensors = list(tensors)
    if not tensors:
        raise BadParam("empty tensor list")
    total = 0.0
    count = 0
    for t in tensors:
        m = fn(t)
        total += float(m.scores[m.valid].sum())
        count += int(m.valid.sum())
    return total / count if count else 0.0
