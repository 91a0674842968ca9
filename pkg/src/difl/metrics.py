"""Evaluation metrics: confusion counts, accuracy / sensitivity /
specificity, ROC curves with trapezoidal AUC, and cross-trial aggregation.

Undefined quantities raise UndefinedMetricError instead of silently
returning 0: sensitivity needs at least one positive, specificity at least
one negative, AUC both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError, UndefinedMetricError

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "auc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self):
        return self.tp + self.fn

    @property
    def negatives(self):
        return self.tn + self.fp


def _check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 1 or labels.ndim != 1 or scores.shape != labels.shape:
        raise ShapeError(
            f"scores {scores.shape} and labels {labels.shape} must be equal-length 1-d")
    if scores.size == 0:
        raise ContractError("empty score array")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ContractError("labels must be 0 or 1")
    return scores, labels


def confusion(scores, labels, threshold=0.5):
    """Count outcomes with 'predict positive iff score >= threshold'."""
    scores, labels = _check_scores_labels(scores, labels)
    pred = scores >= threshold
    pos = labels == 1.0
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def accuracy(cm):
    if cm.total == 0:
        raise UndefinedMetricError("accuracy undefined on zero examples")
    return (cm.tp + cm.tn) / cm.total


def sensitivity(cm):
    """True positive rate: TP / (TP + FN)."""
    if cm.positives == 0:
        raise UndefinedMetricError("sensitivity undefined without positives")
    return cm.tp / cm.positives


def specificity(cm):
    """True negative rate: TN / (TN + FP)."""
    if cm.negatives == 0:
        raise UndefinedMetricError("specificity undefined without negatives")
    return cm.tn / cm.negatives


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept over distinct scores, descending.

    Anchored at (0, 0) with threshold +inf and ending at (1, 1); fpr and tpr
    are non-decreasing along the curve.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_auc(scores, labels):
    """Build the ROC curve and its trapezoidal area.

    The sweep visits each distinct score once (ties collapse into a single
    operating point), which makes the trapezoidal area equal to the
    Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(equal).
    """
    scores, labels = _check_scores_labels(scores, labels)
    npos = int(labels.sum())
    nneg = labels.size - npos
    if npos == 0 or nneg == 0:
        raise UndefinedMetricError("AUC undefined without both classes")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    l = labels[order]
    # last index of each tie group
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(l)[last]
    fp = np.cumsum(1.0 - l)[last]
    fpr = np.concatenate([[0.0], fp / nneg])
    tpr = np.concatenate([[0.0], tp / npos])
    thresholds = np.concatenate([[np.inf], s[last]])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds), auc


@dataclass(frozen=True)
class TrialMetrics:
    accuracy: float
    sensitivity: float
    specificity: float
    auc: float

    def get(self, name):
        if name not in METRIC_NAMES:
            raise ContractError(f"unknown metric {name!r}")
        return getattr(self, name)


def evaluate_scores(scores, labels, threshold=0.5):
    """All four metrics plus the ROC curve for one scored test set."""
    cm = confusion(scores, labels, threshold)
    curve, auc = roc_auc(scores, labels)
    return TrialMetrics(accuracy=accuracy(cm), sensitivity=sensitivity(cm),
                        specificity=specificity(cm), auc=auc), curve


@dataclass(frozen=True)
class MetricsReport:
    """Mean and sample standard deviation of each metric across trials."""

    count: int
    means: dict
    stds: dict
    trials: tuple

    def formatted(self, name):
        """Two-decimal 'mean +/- std' rendering, e.g. '0.80 ± 0.01'."""
        return f"{self.means[name]:.2f} ± {self.stds[name]:.2f}"


def aggregate(trials):
    """Aggregate per-trial TrialMetrics into means and sample stds.

    The standard deviation uses ddof=1 and is defined as 0.0 for a single
    trial.
    """
    trials = tuple(trials)
    if not trials:
        raise ContractError("no trials to aggregate")
    means, stds = {}, {}
    for name in METRIC_NAMES:
        vals = np.array([t.get(name) for t in trials], dtype=np.float64)
        means[name] = float(vals.mean())
        stds[name] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return MetricsReport(count=len(trials), means=means, stds=stds,
                         trials=trials)


# ------------------------------------------------------------------ SVG plot

_SVG_SIZE = 480
_SVG_MARGIN = 56
_COLORS = ("#1f6fb2", "#d1495b", "#3a7d44", "#8654a1", "#c78a2d", "#4a4a4a")


def _sx(v):
    return _SVG_MARGIN + v * (_SVG_SIZE - 2 * _SVG_MARGIN)


def _sy(v):
    return _SVG_SIZE - _SVG_MARGIN - v * (_SVG_SIZE - 2 * _SVG_MARGIN)


def roc_svg(curves, title="ROC"):
    """Render ROC curves as a deterministic standalone SVG string.

    ``curves`` is a list of (label, RocCurve) pairs. No timestamps, random
    ids, or library version strings are embedded, so equal inputs give
    byte-identical output.
    """
    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" '
               f'height="{_SVG_SIZE}" viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">')
    out.append(f'<rect width="{_SVG_SIZE}" height="{_SVG_SIZE}" fill="white"/>')
    out.append(f'<text x="{_SVG_SIZE / 2:.1f}" y="24" text-anchor="middle" '
               f'font-family="sans-serif" font-size="15">{title}</text>')
    # frame and gridline ticks at 0, 0.25, ..., 1
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<line x1="{_sx(t):.1f}" y1="{_sy(0):.1f}" x2="{_sx(t):.1f}" '
                   f'y2="{_sy(0) + 5:.1f}" stroke="black"/>')
        out.append(f'<text x="{_sx(t):.1f}" y="{_sy(0) + 18:.1f}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{t:g}</text>')
        out.append(f'<line x1="{_sx(0):.1f}" y1="{_sy(t):.1f}" '
                   f'x2="{_sx(0) - 5:.1f}" y2="{_sy(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{_sx(0) - 8:.1f}" y="{_sy(t) + 4:.1f}" '
                   f'text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{t:g}</text>')
    out.append(f'<rect x="{_sx(0):.1f}" y="{_sy(1):.1f}" '
               f'width="{_sx(1) - _sx(0):.1f}" height="{_sy(0) - _sy(1):.1f}" '
               f'fill="none" stroke="black"/>')
    out.append(f'<line x1="{_sx(0):.1f}" y1="{_sy(0):.1f}" x2="{_sx(1):.1f}" '
               f'y2="{_sy(1):.1f}" stroke="#999999" stroke-dasharray="5,4"/>')
    out.append(f'<text x="{_SVG_SIZE / 2:.1f}" y="{_SVG_SIZE - 12}" '
               f'text-anchor="middle" font-family="sans-serif" font-size="12">'
               f'false positive rate</text>')
    out.append(f'<text x="16" y="{_SVG_SIZE / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {_SVG_SIZE / 2:.1f})">'
               f'true positive rate</text>')
    for i, (label, curve) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_sx(f):.2f},{_sy(t):.2f}"
                       for f, t in zip(curve.fpr, curve.tpr))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"/>')
        out.append(f'<text x="{_sx(1) - 4:.1f}" y="{_sy(0) - 10 - 14 * i:.1f}" '
                   f'text-anchor="end" font-family="sans-serif" font-size="11" '
                   f'fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
