"""Embedding quality and downstream classification metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .numerics import ShapeError, as_matrix

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "jaccard", "roc_auc")


def _ranked_neighbours(D):
    """Row-wise neighbour order by ascending distance, self first.

    Ties are broken by ascending sample index (stable sort).
    """
    D = D.copy()
    np.fill_diagonal(D, -1.0)
    return np.argsort(D, axis=1, kind="stable")


def trustworthiness(X, E, k=5):
    """Trustworthiness of embedding ``E`` of the rows of ``X``.

    Penalises samples that are among the ``k`` nearest neighbours of ``i`` in
    ``E`` but not in ``X``, by how far down ``i``'s original-space ranking
    they sit. Returns a value in [0, 1]; 1 means no intruders.
    """
    X = as_matrix(X, "X")
    E = as_matrix(E, "E")
    m = X.shape[0]
    if E.shape[0] != m:
        raise ShapeError(f"X has {m} rows, E has {E.shape[0]}")
    if m < 3:
        raise ValueError(f"need at least 3 samples, got {m}")
    if not 1 <= k < m / 2:
        raise ValueError(f"k={k} must satisfy 1 <= k < m/2 = {m / 2}")
    order_x = _ranked_neighbours(cdist(X, X, "sqeuclidean"))
    order_e = _ranked_neighbours(cdist(E, E, "sqeuclidean"))
    # rank[i, j] = position of j in i's original ordering (self = 0)
    rank = np.empty_like(order_x)
    rows = np.arange(m)[:, None]
    rank[rows, order_x] = np.arange(m)[None, :]
    nn_e = order_e[:, 1:k + 1]
    r = rank[rows, nn_e]
    penalty = np.sum(np.where(r > k, r - k, 0))
    return float(1.0 - 2.0 / (m * k * (2 * m - 3 * k - 1)) * penalty)


def _check_train(train_emb, train_labels):
    train_emb = as_matrix(train_emb, "train_emb")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if train_emb.shape[0] == 0:
        raise ValueError("empty training set")
    if train_labels.shape != (train_emb.shape[0],):
        raise ShapeError("train_emb and train_labels differ in length")
    return train_emb, train_labels


def knn_classify(train_emb, train_labels, test_emb, k=5, num_classes=None):
    """Majority vote over the ``k`` nearest training points (Euclidean).

    Returns ``(predicted, scores)`` where ``scores[i, c]`` is the fraction of
    votes for class ``c``. Vote ties go to the smaller class index and
    distance ties to the smaller training index.
    """
    train_emb, train_labels = _check_train(train_emb, train_labels)
    test_emb = as_matrix(test_emb, "test_emb")
    if k < 1:
        raise ValueError("k must be >= 1")
    p = int(num_classes or train_labels.max() + 1)
    k = min(k, train_emb.shape[0])
    scores = np.zeros((test_emb.shape[0], p))
    # chunk the distance matrix to bound memory on large test sets
    for start in range(0, test_emb.shape[0], 1024):
        D = cdist(test_emb[start:start + 1024], train_emb, "sqeuclidean")
        nn = np.argsort(D, axis=1, kind="stable")[:, :k]
        votes = train_labels[nn]
        for c in range(p):
            scores[start:start + D.shape[0], c] = np.count_nonzero(votes == c, axis=1)
    scores /= k
    return np.argmax(scores, axis=1), scores


def gnb_fit_predict(train_emb, train_labels, test_emb, num_classes=None, var_floor=1e-9):
    """Gaussian naive Bayes with class-frequency priors.

    Per-class variances are floored at ``var_floor * max feature variance``.
    Returns ``(predicted, posteriors)``.
    """
    train_emb, train_labels = _check_train(train_emb, train_labels)
    test_emb = as_matrix(test_emb, "test_emb")
    p = int(num_classes or train_labels.max() + 1)
    counts = np.bincount(train_labels, minlength=p)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"classes {missing} have no training samples")
    floor = var_floor * max(float(np.var(train_emb, axis=0).max()), 0.0)
    floor = floor if floor > 0 else var_floor
    means = np.stack([train_emb[train_labels == c].mean(axis=0) for c in range(p)])
    var = np.stack([train_emb[train_labels == c].var(axis=0) for c in range(p)])
    var = np.maximum(var, floor)
    log_prior = np.log(counts / counts.sum())
    # log N(x | mu, var) summed over features, for every (sample, class)
    ll = -0.5 * (np.sum(np.log(2 * np.pi * var), axis=1)[None, :]
                 + ((test_emb[:, None, :] - means[None]) ** 2 / var[None]).sum(axis=2))
    joint = ll + log_prior
    joint -= joint.max(axis=1, keepdims=True)
    post = np.exp(joint)
    post /= post.sum(axis=1, keepdims=True)
    return np.argmax(post, axis=1), post


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    jaccard: float
    roc_auc: float

    def as_dict(self):
        return asdict(self)


def per_class_scores(true, predicted):
    """Per-class precision, recall, F1 and Jaccard over the union of labels.

    Undefined ratios (0/0) are reported as 0.
    """
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    classes = np.union1d(true, predicted)
    tp = np.array([np.sum((true == c) & (predicted == c)) for c in classes], dtype=float)
    fp = np.array([np.sum((true != c) & (predicted == c)) for c in classes], dtype=float)
    fn = np.array([np.sum((true == c) & (predicted != c)) for c in classes], dtype=float)

    def ratio(a, b):
        return np.divide(a, b, out=np.zeros_like(a), where=b > 0)

    prec = ratio(tp, tp + fp)
    rec = ratio(tp, tp + fn)
    f1 = ratio(2 * prec * rec, prec + rec)
    jac = ratio(tp, tp + fp + fn)
    never_predicted = classes[(tp + fp) == 0]
    if never_predicted.size:
        log.info("classes %s never predicted; their precision is set to 0",
                 never_predicted.tolist())
    return classes, prec, rec, f1, jac


def roc_auc_ovr(true, scores):
    """Macro one-vs-rest ROC AUC via the Mann-Whitney rank statistic.

    Classes with no positives or no negatives in ``true`` are skipped.
    """
    true = np.asarray(true, dtype=np.int64)
    scores = as_matrix(scores, "scores")
    aucs = []
    for c in range(scores.shape[1]):
        pos = true == c
        npos, nneg = int(pos.sum()), int((~pos).sum())
        if npos == 0 or nneg == 0:
            continue
        ranks = rankdata(scores[:, c])
        aucs.append((ranks[pos].sum() - npos * (npos + 1) / 2) / (npos * nneg))
    return float(np.mean(aucs)) if aucs else float("nan")


def classification_metrics(true, predicted, scores):
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    scores = as_matrix(scores, "scores")
    if true.shape != predicted.shape or scores.shape[0] != true.size:
        raise ShapeError("true, predicted and scores must have the same number of rows")
    _, prec, rec, f1, jac = per_class_scores(true, predicted)
    return ClassificationReport(
        accuracy=float(np.mean(true == predicted)),
        precision=float(prec.mean()),
        recall=float(rec.mean()),
        f1=float(f1.mean()),
        jaccard=float(jac.mean()),
        roc_auc=roc_auc_ovr(true, scores),
    )
