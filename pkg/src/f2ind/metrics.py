"""Classification metrics: confusion-derived scores plus ROC and PR areas.

The fake class (label 1) is the positive class throughout. ROC-AUC is
computed by a threshold sweep with trapezoidal integration, which equals the
Mann-Whitney statistic with ties counted at half weight. PR-AUC is average
precision over the descending-score ranking (ties broken by original index
via a stable sort), the standard step-wise, non-interpolated estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyError, UndefinedMetricError


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Tally predictions (score >= threshold -> fake) against labels."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.size == 0:
        raise EmptyError("cannot build a confusion matrix from zero samples")
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


@dataclass
class PRF1:
    """Per-class precision/recall/F1; degenerate zero-denominator cases are
    reported as 0 and named in `degenerate`."""

    precision_fake: float
    recall_fake: float
    f1_fake: float
    precision_true: float
    recall_true: float
    f1_true: float
    macro_f1: float
    degenerate: tuple[str, ...] = ()


def _prf(tp: int, fp: int, fn: int, tag: str, degenerate: list[str]) -> tuple[float, float, float]:
    if tp + fp == 0:
        degenerate.append(f"precision_{tag}")
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        degenerate.append(f"recall_{tag}")
        recall = 0.0
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0.0:
        degenerate.append(f"f1_{tag}")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def prf1(counts: ConfusionCounts) -> PRF1:
    """Precision/recall/F1 for both classes; macro is their unweighted mean."""
    degenerate: list[str] = []
    p_fake, r_fake, f_fake = _prf(counts.tp, counts.fp, counts.fn, "fake", degenerate)
    # the true class is scored by swapping which label counts as positive
    p_true, r_true, f_true = _prf(counts.tn, counts.fn, counts.fp, "true", degenerate)
    return PRF1(
        precision_fake=p_fake,
        recall_fake=r_fake,
        f1_fake=f_fake,
        precision_true=p_true,
        recall_true=r_true,
        f1_true=f_true,
        macro_f1=(f_fake + f_true) / 2.0,
        degenerate=tuple(degenerate),
    )


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via threshold sweep + trapezoids."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # cumulative counts at each distinct score boundary
    distinct = np.flatnonzero(np.diff(s_sorted) != 0.0)
    boundaries = np.concatenate([distinct, [s.size - 1]])
    tp = np.cumsum(y_sorted == 1)[boundaries]
    fp = np.cumsum(y_sorted == 0)[boundaries]
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return float(np.trapezoid(tpr, fpr))


def pr_auc(scores, labels) -> float:
    """Average precision over the stable descending-score ranking."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC needs at least one positive sample")
    order = np.argsort(-s, kind="stable")
    y_sorted = (y[order] == 1).astype(np.float64)
    precision_at = np.cumsum(y_sorted) / np.arange(1, s.size + 1)
    return float(precision_at[y_sorted == 1.0].sum() / n_pos)


@dataclass
class MetricsReport:
    """The eight headline metrics. precision/recall are for the fake (positive)
    class; per-class detail lives in the PRF1 breakdown."""

    accuracy: float
    precision: float
    recall: float
    f1_fake: float
    f1_true: float
    macro_f1: float
    roc_auc: float
    pr_auc: float
    degenerate: tuple[str, ...] = field(default=(), compare=False)

    METRIC_KEYS = ("accuracy", "precision", "recall", "f1_fake", "f1_true", "macro_f1", "roc_auc", "pr_auc")

    @classmethod
    def from_scores(cls, scores, labels, threshold: float = 0.5) -> "MetricsReport":
        counts = confusion(scores, labels, threshold)
        scores_pr = prf1(counts)
        return cls(
            accuracy=(counts.tp + counts.tn) / counts.total,
            precision=scores_pr.precision_fake,
            recall=scores_pr.recall_fake,
            f1_fake=scores_pr.f1_fake,
            f1_true=scores_pr.f1_true,
            macro_f1=scores_pr.macro_f1,
            roc_auc=roc_auc(scores, labels),
            pr_auc=pr_auc(scores, labels),
            degenerate=scores_pr.degenerate,
        )

    def to_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.METRIC_KEYS}

    def to_kv_text(self) -> str:
        """Flat key=value block; positive class stated explicitly."""
        lines = ["positive_class=fake"]
        lines += [f"{k}={getattr(self, k)!r}" for k in self.METRIC_KEYS]
        if self.degenerate:
            lines.append("degenerate=" + ",".join(self.degenerate))
        return "\n".join(lines) + "\n"
