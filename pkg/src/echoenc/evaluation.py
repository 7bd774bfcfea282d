"""KNN scoring, ROC metrics, classification metrics and CV splitters."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import _kernels as K
from .errors import UsageError

REPORT_SCHEMA_VERSION = 1

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # renamed in numpy 2.0


@dataclass
class EmbeddingSet:
    ids: list
    vectors: np.ndarray  # (M, E)
    labels: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2:
            raise UsageError(f"embedding matrix must be 2-D, got {self.vectors.shape}")
        if len(self.ids) != self.vectors.shape[0]:
            raise UsageError(f"{len(self.ids)} ids for {self.vectors.shape[0]} vectors")
        if self.labels is not None and len(self.labels) != len(self.ids):
            raise UsageError("labels do not match ids")
        if not np.all(np.isfinite(self.vectors)):
            raise UsageError("embedding set contains non-finite values")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, idx) -> "EmbeddingSet":
        idx = list(idx)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return EmbeddingSet([self.ids[i] for i in idx], self.vectors[idx], labels, dict(self.meta))


# --------------------------------------------------------------------------
# KNN
# --------------------------------------------------------------------------


def l2_normalize(x):
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def distances(train, queries, metric="euclidean", normalize=False):
    """(Q, M) distance matrix between query rows and training rows."""
    a = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    b = np.atleast_2d(np.asarray(train, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"dimension mismatch: query {a.shape[1]} vs train {b.shape[1]}")
    if normalize or metric == "cosine":
        a, b = l2_normalize(a), l2_normalize(b)
    if metric == "euclidean":
        return np.sqrt(K.pairwise_sqdist(a, b))
    if metric == "cosine":
        return 1.0 - a @ b.T
    raise UsageError(f"unknown metric {metric!r}")


def _train_matrix(train):
    return train.vectors if isinstance(train, EmbeddingSet) else np.asarray(train)


def knn_anomaly_scores(train, queries, k=1, metric="euclidean", l2_normalize=True) -> np.ndarray:
    X = _train_matrix(train)
    if X.shape[0] == 0:
        raise UsageError("empty training set")
    if not 1 <= k <= X.shape[0]:
        raise UsageError(f"k={k} must lie in [1, {X.shape[0]}]")
    D = distances(X, queries, metric, l2_normalize)
    return np.sort(D, axis=1)[:, :k].mean(axis=1)


def knn_anomaly_score(train, query, k=1, metric="euclidean", l2_normalize=True) -> float:
    """Mean distance to the k nearest training vectors; higher is more anomalous."""
    return float(knn_anomaly_scores(train, np.asarray(query)[None], k, metric, l2_normalize)[0])


def knn_classify(train: EmbeddingSet, query, k=1, metric="euclidean", l2_normalize=True):
    """Majority vote over the k nearest labelled vectors.

    Vote ties go to whichever tied class has the nearest member; equal
    distances are ordered by training index.
    """
    if len(train) == 0:
        raise UsageError("empty training set")
    if train.labels is None:
        raise UsageError("training set has no labels")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    d = distances(train.vectors, np.asarray(query)[None], metric, l2_normalize)[0]
    order = np.argsort(d, kind="stable")[: min(k, len(train))]
    labels = [train.labels[i] for i in order]
    votes = Counter(labels)
    best = max(votes.values())
    tied = {c for c, v in votes.items() if v == best}
    return next(lab for lab in labels if lab in tied)


# --------------------------------------------------------------------------
# ROC
# --------------------------------------------------------------------------


def _check_scores(neg, pos):
    neg = np.asarray(neg, dtype=np.float64).ravel()
    pos = np.asarray(pos, dtype=np.float64).ravel()
    if neg.size == 0 or pos.size == 0:
        raise UsageError("both classes need at least one score")
    return neg, pos


def roc_auc(scores_neg, scores_pos) -> float:
    """Mann-Whitney estimate: P(pos > neg) + 0.5 P(pos == neg)."""
    neg, pos = _check_scores(scores_neg, scores_pos)
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def roc_curve(scores_neg, scores_pos):
    """Empirical ROC vertices from (0, 0) to (1, 1), one per distinct threshold."""
    neg, pos = _check_scores(scores_neg, scores_pos)
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="stable")
    scores, is_pos = scores[order], is_pos[order]
    last = np.r_[np.nonzero(np.diff(scores))[0], scores.size - 1]
    tp = np.cumsum(is_pos)[last]
    fp = (last + 1) - tp
    fpr = np.r_[0.0, fp / neg.size]
    tpr = np.r_[0.0, tp / pos.size]
    return fpr, tpr


def partial_auc(scores_neg, scores_pos, max_fpr=0.1) -> float:
    """Trapezoid area under the ROC for FPR in [0, max_fpr], divided by max_fpr."""
    if not 0.0 < max_fpr <= 1.0:
        raise UsageError(f"max_fpr must lie in (0, 1], got {max_fpr}")
    fpr, tpr = roc_curve(scores_neg, scores_pos)
    stop = np.searchsorted(fpr, max_fpr, side="right")
    x, y = fpr[:stop], tpr[:stop]
    if x[-1] < max_fpr:
        x = np.r_[x, max_fpr]
        y = np.r_[y, np.interp(max_fpr, fpr[stop - 1 : stop + 1], tpr[stop - 1 : stop + 1])]
    return float(_trapezoid(y, x) / max_fpr)


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------


def classification_metrics(y_true, y_pred, classes=None) -> dict:
    """Accuracy plus macro P/R/F1 over the declared classes (0 on zero division)."""
    y_true, y_pred = list(y_true), list(y_pred)
    if not y_true:
        raise UsageError("no predictions to score")
    if len(y_true) != len(y_pred):
        raise UsageError("y_true and y_pred lengths differ")
    classes = sorted(set(y_true) | set(y_pred)) if classes is None else list(classes)
    unknown = (set(y_true) | set(y_pred)) - set(classes)
    if unknown:
        raise UsageError(f"labels outside the declared classes: {sorted(unknown)}")
    per_class = {}
    for c in classes:
        tp = sum(t == c and p == c for t, p in zip(y_true, y_pred))
        fp = sum(t != c and p == c for t, p in zip(y_true, y_pred))
        fn = sum(t == c and p != c for t, p in zip(y_true, y_pred))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class[str(c)] = {"precision": prec, "recall": rec, "f1": f1, "support": tp + fn}
    n = len(classes)
    return {
        "accuracy": sum(t == p for t, p in zip(y_true, y_pred)) / len(y_true),
        "macro_precision": sum(v["precision"] for v in per_class.values()) / n,
        "macro_recall": sum(v["recall"] for v in per_class.values()) / n,
        "macro_f1": sum(v["f1"] for v in per_class.values()) / n,
        "per_class": per_class,
    }


# --------------------------------------------------------------------------
# splits and aggregation
# --------------------------------------------------------------------------


def loocv_splits(n: int):
    if n < 2:
        raise UsageError(f"LOOCV needs n >= 2, got {n}")
    idx = np.arange(n)
    return [(np.delete(idx, i), np.array([i])) for i in range(n)]


def kfold_splits(n: int, k: int = 5, seed: int = 0):
    if n < 2:
        raise UsageError(f"k-fold needs n >= 2, got {n}")
    if not 2 <= k <= n:
        raise UsageError(f"k={k} must lie in [2, n={n}]")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


def _hmean(values):
    values = list(values)
    if any(v <= 0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def aggregate_scores(per_machine, mode="arithmetic") -> dict:
    if not per_machine:
        raise UsageError("nothing to aggregate")
    aucs = [m["auc"] for m in per_machine]
    paucs = [m["pauc"] for m in per_machine]
    if mode == "arithmetic":
        mean = lambda v: sum(v) / len(v)  # noqa: E731
    elif mode == "harmonic":
        mean = _hmean
    else:
        raise UsageError(f"unknown aggregation mode {mode!r}")
    return {"mean_auc": mean(aucs), "mean_pauc": mean(paucs), "combined": mean(aucs + paucs), "mode": mode}


def isclose(a, b, tol=1e-12):
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)
