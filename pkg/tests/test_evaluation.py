import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echoenc.errors import UsageError
from echoenc.evaluation import (
    EmbeddingSet,
    aggregate_scores,
    classification_metrics,
    kfold_splits,
    knn_anomaly_score,
    knn_anomaly_scores,
    knn_classify,
    loocv_splits,
    partial_auc,
    roc_auc,
)

from oracles import auc_pairs, knn_score_exhaustive, pauc_sweep


def test_knn_examples():
    train = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert knn_anomaly_score(train, [0.0, 1.0], 1, l2_normalize=False) == 1.0
    assert abs(knn_anomaly_score(train, [0.0, 1.0], 2, l2_normalize=False) - (1 + math.sqrt(2)) / 2) < 1e-12
    assert knn_anomaly_score(train, [1.0, 0.0], 1, l2_normalize=False) == 0.0
    with pytest.raises(UsageError):
        knn_anomaly_score(np.zeros((0, 2)), [0.0, 1.0])


def test_knn_matches_exhaustive(rng):
    for _ in range(40):
        M, E = int(rng.integers(1, 200)), int(rng.integers(1, 64))
        X, q = rng.standard_normal((M, E)), rng.standard_normal(E)
        k = int(rng.integers(1, M + 1))
        for norm in (False, True):
            assert abs(knn_anomaly_score(X, q, k, l2_normalize=norm)
                       - knn_score_exhaustive(X.tolist(), q.tolist(), k, norm)) < 1e-9


def test_l2_euclidean_rank_equivalent_to_cosine(rng):
    X, Q = rng.standard_normal((30, 8)), rng.standard_normal((10, 8))
    a = knn_anomaly_scores(X, Q, 1, "euclidean", True)
    b = knn_anomaly_scores(X, Q, 1, "cosine", False)
    assert (np.argsort(a) == np.argsort(b)).all()


def test_knn_classify_rules():
    tr = EmbeddingSet(["a", "b", "c", "d"], np.array([[0.0, 1], [0.1, 1], [1, 0], [5, 5]]), ["A", "A", "B", "C"])
    assert knn_classify(tr, [1.0, 0.0], 1, l2_normalize=False) == "B"
    assert knn_classify(tr, [0.05, 0.9], 3, l2_normalize=False) == "A"
    two = EmbeddingSet(["a", "b"], np.array([[0.0, 0.0], [1.0, 0.0]]), ["A", "B"])
    assert knn_classify(two, [0.2, 0.0], 2, l2_normalize=False) == "A"
    assert knn_classify(two, [0.8, 0.0], 2, l2_normalize=False) == "B"
    with pytest.raises(UsageError):
        knn_classify(EmbeddingSet([], np.zeros((0, 2)), []), [0.0, 0.0])


def test_auc_examples():
    assert roc_auc([0.1, 0.2], [0.8, 0.9]) == 1.0
    assert roc_auc([0.1, 0.5, 0.5], [0.1, 0.5, 0.5]) == 0.5
    assert roc_auc([0.3, 0.7], [0.5]) == 0.5
    with pytest.raises(UsageError):
        roc_auc([], [1.0])


def test_pauc_examples(rng):
    assert partial_auc([0.1, 0.2], [0.8, 0.9], 0.1) == 1.0
    assert partial_auc([0.1, 0.2], [0.8, 0.9], 0.37) == 1.0
    neg, pos = rng.standard_normal(20), rng.standard_normal(15) + 0.5
    assert abs(partial_auc(neg, pos, 1.0) - roc_auc(neg, pos)) < 1e-12


def test_metric_oracles(rng):
    for _ in range(300):
        nn, npos = int(rng.integers(1, 31)), int(rng.integers(1, 31))
        # coarse rounding forces ties
        neg = np.round(rng.standard_normal(nn), int(rng.integers(0, 3)))
        pos = np.round(rng.standard_normal(npos) + rng.uniform(-1, 2), int(rng.integers(0, 3)))
        assert abs(roc_auc(neg, pos) - auc_pairs(neg, pos)) < 1e-9
        f = float(rng.uniform(0.01, 1.0))
        assert abs(partial_auc(neg, pos, f) - pauc_sweep(neg, pos, f)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20, unique=True),
       st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20, unique=True))
def test_auc_symmetry(neg, pos):
    if set(neg) & set(pos):
        return
    assert abs(roc_auc(neg, pos) + roc_auc(pos, neg) - 1.0) < 1e-12


def test_monotone_invariance(rng):
    neg, pos = rng.standard_normal(25), rng.standard_normal(20) + 0.3
    f = lambda v: np.exp(v) * 3 + 1  # noqa: E731
    assert roc_auc(neg, pos) == roc_auc(f(neg), f(pos))
    assert abs(partial_auc(neg, pos) - partial_auc(f(neg), f(pos))) < 1e-15


def test_classification_examples():
    m = classification_metrics(["A", "B"], ["A", "B"], ["A", "B"])
    assert m["accuracy"] == m["macro_f1"] == m["macro_precision"] == m["macro_recall"] == 1.0
    m = classification_metrics(["A", "A", "B", "B"], ["A"] * 4, ["A", "B"])
    assert (m["accuracy"], m["macro_recall"], m["macro_precision"]) == (0.5, 0.5, 0.25)
    assert abs(m["macro_f1"] - 1 / 3) < 1e-15
    m = classification_metrics(["A"], ["A"], ["A", "B"])
    assert m["per_class"]["A"]["f1"] == 1.0 and m["macro_f1"] == 0.5
    with pytest.raises(UsageError):
        classification_metrics([], [])
    with pytest.raises(UsageError):
        classification_metrics(["A"], ["Z"], ["A"])


def test_accuracy_is_micro_recall(rng):
    classes = ["a", "b", "c"]
    t = list(rng.choice(classes, 50))
    p = list(rng.choice(classes, 50))
    m = classification_metrics(t, p, classes)
    tp = sum(m["per_class"][c]["recall"] * m["per_class"][c]["support"] for c in classes)
    assert abs(m["accuracy"] - tp / 50) < 1e-12
    assert all(0 <= m[k] <= 1 for k in ("macro_precision", "macro_recall", "macro_f1"))


def test_splits():
    s = loocv_splits(3)
    assert [t.tolist() for _, t in s] == [[0], [1], [2]]
    folds = kfold_splits(10, 5, seed=4)
    assert [len(t) for _, t in folds] == [2] * 5
    assert sorted(np.concatenate([t for _, t in folds]).tolist()) == list(range(10))
    for tr, te in folds:
        assert not set(tr) & set(te) and len(tr) + len(te) == 10
    assert all((a[1] == b[1]).all() for a, b in zip(folds, kfold_splits(10, 5, seed=4)))
    with pytest.raises(UsageError):
        kfold_splits(3, 5)


def test_aggregate():
    one = aggregate_scores([{"auc": 0.7, "pauc": 0.6}])
    assert (one["mean_auc"], one["mean_pauc"]) == (0.7, 0.6)
    two = [{"auc": 0.5, "pauc": 0.5}, {"auc": 1.0, "pauc": 1.0}]
    assert aggregate_scores(two)["mean_auc"] == 0.75
    assert abs(aggregate_scores(two, "harmonic")["mean_auc"] - 2 / 3) < 1e-15
