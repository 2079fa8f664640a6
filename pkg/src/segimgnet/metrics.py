"""Evaluation metrics: rank AUC, thresholded confusion metrics, Dice, and CSV reports."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

METRIC_COLUMNS = ("auc", "sensitivity", "specificity", "f1", "precision", "accuracy")
METRIC_TITLES = ("AUC", "Sensitivity", "Specificity", "F1 score", "Precision", "Accuracy")


@dataclass(frozen=True)
class MetricsReport:
    auc: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    f1: Optional[float]
    precision: Optional[float]
    accuracy: float
    n_pos: int
    n_neg: int
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def values(self) -> Tuple[Optional[float], ...]:
        return tuple(getattr(self, k) for k in METRIC_COLUMNS)

    def as_dict(self) -> dict:
        return asdict(self)


def _validate(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores but {labels.size} labels")
    if scores.size == 0:
        raise DataError("metrics need at least one sample")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; a tied positive/negative pair earns half credit."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined when only one class is present")
    ranks = rankdata(scores)  # average ranks: ties share credit equally
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


def confusion_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Thresholded metrics (a sample is called positive when score >= threshold); AUC left empty.

    Metrics whose denominator is zero are reported as ``None``.
    """
    scores, labels = _validate(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fn = int(np.sum(~pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    prec = _ratio(tp, tp + fp)
    if sens is None or prec is None:
        f1 = None
    else:
        f1 = 2 * prec * sens / (prec + sens) if prec + sens > 0 else 0.0
    return MetricsReport(None, sens, spec, f1, prec, (tp + tn) / labels.size,
                         int(pos.sum()), int((~pos).sum()), tp, tn, fp, fn)


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    rep = confusion_metrics(scores, labels, threshold)
    value = auc(scores, labels) if rep.n_pos and rep.n_neg else None
    return MetricsReport(value, *rep.values()[1:], rep.n_pos, rep.n_neg, rep.tp, rep.tn, rep.fp, rep.fn)


def dice(pred, mask) -> float:
    """Hard Dice 2|A.B| / (|A| + |B|); two empty masks agree perfectly."""
    a = np.asarray(pred, dtype=bool)
    b = np.asarray(mask, dtype=bool)
    total = a.sum() + b.sum()
    return 1.0 if total == 0 else float(2.0 * np.sum(a & b) / total)


# -- CSV --------------------------------------------------------------------

def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def summarize(reports: Sequence[MetricsReport]) -> List[Tuple[Optional[float], Optional[float]]]:
    """(mean, population std) per metric column over the reports where it is defined."""
    out = []
    for key in METRIC_COLUMNS:
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        out.append((float(np.mean(vals)), float(np.std(vals))) if vals else (None, None))
    return out


def mean_std_cell(mean: Optional[float], std: Optional[float]) -> str:
    return "" if mean is None else f"{mean:.3f}±{std:.3f}"


def folds_csv(reports: Sequence[MetricsReport], labels: Optional[Iterable[str]] = None) -> str:
    """One row per fold in table column order plus a mean±std row."""
    labels = list(labels) if labels is not None else [f"fold{i}" for i in range(len(reports))]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("fold",) + METRIC_TITLES)
    for name, rep in zip(labels, reports):
        w.writerow([name] + [_fmt(v) for v in rep.values()])
    w.writerow(["mean±std"] + [mean_std_cell(m, s) for m, s in summarize(reports)])
    return buf.getvalue()
