"""AUC, session-weighted GAUC and logloss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


@dataclass
class PredictionSet:
    scores: np.ndarray
    labels: np.ndarray
    session_ids: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        self.session_ids = np.asarray(self.session_ids)
        if not (len(self.scores) == len(self.labels) == len(self.session_ids)):
            raise ValueError("scores, labels and session_ids must have equal length")


def _check_labels(labels: np.ndarray) -> None:
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from mid-ranks; tied pairs count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    _check_labels(y)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks, so ties split evenly
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairwise(scores, labels) -> float:
    """O(P*N) enumeration of positive/negative pairs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    p, n = s[y == 1], s[y == 0]
    if len(p) == 0 or len(n) == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    diff = p[:, None] - n[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def gauc(pred: PredictionSet) -> float:
    """Per-session AUC weighted by session log counts.

    Sessions with a single class are skipped and the remaining weights are
    renormalized.
    """
    _check_labels(pred.labels)
    order = np.argsort(pred.session_ids, kind="stable")
    sid = pred.session_ids[order]
    scores, labels = pred.scores[order], pred.labels[order]
    starts = np.flatnonzero(np.r_[True, sid[1:] != sid[:-1]])
    ends = np.r_[starts[1:], len(sid)]
    weights, values = [], []
    for a, b in zip(starts, ends):
        y = labels[a:b]
        n_pos = int(y.sum())
        if n_pos == 0 or n_pos == b - a:
            continue
        weights.append(b - a)
        values.append(auc(scores[a:b], y))
    if not weights:
        raise UndefinedMetricError("no session contains both classes")
    # normalize first so a lone session carries weight exactly 1
    w = np.asarray(weights, dtype=np.float64)
    return float(np.dot(w / w.sum(), values))


def logloss(scores, labels, eps: float = 1e-12) -> float:
    p = np.clip(np.asarray(scores, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
