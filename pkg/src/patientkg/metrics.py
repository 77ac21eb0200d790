"""Multi-label evaluation metrics: F1, ROC-AUC and precision/recall at k."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError, ValidationError
from .tables import format_table


@dataclass
class MetricsReport:
    macro_f1: float
    micro_f1: float
    macro_auc: float
    micro_auc: float
    p_at_k: float
    r_at_k: float
    k: int

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self):
        header = ["F1 Macro", "F1 Micro", "AUC Macro", "AUC Micro", f"P@{self.k}", f"R@{self.k}"]
        values = [self.macro_f1, self.micro_f1, self.macro_auc, self.micro_auc, self.p_at_k, self.r_at_k]
        return format_table(header, [[f"{100 * v:.2f}" for v in values]])


def _mean(values):
    # fsum: exactly rounded, so the result does not depend on summation order
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def _as_pair(y_true, other):
    y_true = np.asarray(y_true)
    other = np.asarray(other)
    if y_true.ndim != 2 or y_true.shape != other.shape:
        raise ShapeError(f"truth {y_true.shape} and prediction {other.shape} must be matching 2-D arrays")
    return y_true.astype(bool), other


def f1_scores(y_true, y_pred):
    """(macro, micro) F1. A label with no true and no predicted positives scores 0."""
    y_true, y_pred = _as_pair(y_true, y_pred)
    y_pred = y_pred.astype(bool)
    tp = (y_true & y_pred).sum(axis=0)
    fp = (~y_true & y_pred).sum(axis=0)
    fn = (y_true & ~y_pred).sum(axis=0)
    denom = 2 * tp + fp + fn
    per_label = np.divide(2 * tp, denom, out=np.zeros(tp.shape, dtype=np.float64), where=denom > 0)
    macro = _mean(per_label.tolist())
    total = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / total) if total > 0 else 0.0
    return macro, micro


def binary_auc(truth, scores):
    """ROC-AUC from the Mann-Whitney rank statistic; tied scores count one half."""
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both positive and negative examples")
    ranks = rankdata(scores, method="average")
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_scores(y_true, y_prob):
    """(macro, micro) ROC-AUC. Labels with a single class present are left out of the macro mean."""
    y_true, y_prob = _as_pair(y_true, y_prob)
    y_prob = y_prob.astype(np.float64)
    per_label = []
    for j in range(y_true.shape[1]):
        col = y_true[:, j]
        if col.any() and not col.all():
            per_label.append(binary_auc(col, y_prob[:, j]))
    if not per_label:
        raise ValidationError("no label has both classes present; macro AUC is undefined")
    flat = y_true.reshape(-1)
    micro = binary_auc(flat, y_prob.reshape(-1)) if flat.any() and not flat.all() else float("nan")
    return _mean(per_label), micro


def top_k_indices(y_prob, k):
    """Per row, the k highest-scoring label indices; ties go to the lower index."""
    # stable sort on negated scores keeps lower indices first among equals
    return np.argsort(-np.asarray(y_prob, dtype=np.float64), axis=1, kind="stable")[:, :k]


def precision_recall_at_k(y_true, y_prob, k):
    y_true, y_prob = _as_pair(y_true, y_prob)
    n_labels = y_true.shape[1]
    if not 1 <= k <= n_labels:
        raise ValidationError(f"k must be in [1, {n_labels}], got {k}")
    top = top_k_indices(y_prob, k)
    hits = np.take_along_axis(y_true, top, axis=1).sum(axis=1)
    precision = _mean((hits / k).tolist())
    n_true = y_true.sum(axis=1)
    has_truth = n_true > 0
    recall = _mean((hits[has_truth] / n_true[has_truth]).tolist())
    return precision, recall


def evaluate_predictions(y_true, y_prob, k, threshold=0.5):
    """Full :class:`MetricsReport` from truth and probabilities."""
    y_true = np.asarray(y_true)
    y_prob = np.asarray(y_prob, dtype=np.float64)
    macro_f1, micro_f1 = f1_scores(y_true, y_prob > threshold)
    try:
        macro_auc, micro_auc = auc_scores(y_true, y_prob)
    except ValidationError:
        macro_auc = micro_auc = float("nan")
    p_at_k, r_at_k = precision_recall_at_k(y_true, y_prob, k)
    return MetricsReport(macro_f1, micro_f1, macro_auc, micro_auc, p_at_k, r_at_k, k)
