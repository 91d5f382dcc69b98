"""Downstream evaluations: linear probe, link prediction, community detection."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.metrics import (
    adjusted_rand_score,
    average_precision_score,
    normalized_mutual_info_score,
    roc_auc_score,
)
from sklearn.preprocessing import StandardScaler
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cluster import kmeans_fit
from .graph import split_nodes
from .neuro import ParamStore, adam_step


@dataclass
class Metrics:
    task: str
    values: dict
    runs: int
    seed: int
    dataset: str = ""
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self):
        doc = {k: v for k, v in asdict(self).items() if k != "extra"}
        doc.update(self.extra)
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def config_hash(obj):
    """Short content hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# linear probe


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression on standardized inputs.

    Full-batch training with Adam steps on the mean cross entropy plus
    ``l2 * ||W||^2 / 2``; weights start at zero so the fit is
    deterministic.
    """

    def __init__(self, l2=1e-4, n_iter=300, learning_rate=0.01):
        self.l2 = l2
        self.n_iter = n_iter
        self.learning_rate = learning_rate

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        self.scaler_ = StandardScaler().fit(X)
        xs = self.scaler_.transform(X)
        target = np.searchsorted(self.classes_, y)
        n, d = xs.shape
        k = len(self.classes_)
        store = ParamStore({"w": np.zeros((d, k)), "b": np.zeros(k)})
        onehot = np.eye(k)[target]
        for _ in range(self.n_iter):
            logits = xs @ store["w"] + store["b"]
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            resid = (p - onehot) / n
            store.grads["w"] += xs.T @ resid + self.l2 * store["w"]
            store.grads["b"] += resid.sum(axis=0)
            adam_step(store, self.learning_rate)
        self.coef_ = store["w"]
        self.intercept_ = store["b"]
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        return self.scaler_.transform(X) @ self.coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def probe_accuracy(h, labels, split, **probe_kw):
    clf = LinearProbe(**probe_kw).fit(h[split.train], labels[split.train])
    return float(np.mean(clf.predict(h[split.test]) == labels[split.test]))


def node_classify(h, labels, split=None, runs=10, rng=0, per_class=20, test_size=1000,
                  protocol="citation", **probe_kw):
    """Linear-probe test accuracy, mean and std over ``runs``.

    Without ``split`` every run draws a fresh split seeded ``rng + run``.
    """
    labels = np.asarray(labels)
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] != labels.shape[0]:
        raise ValueError(f"{h.shape[0]} embeddings for {labels.shape[0]} labels")
    accs = []
    for run in range(runs):
        s = split if split is not None else split_nodes(labels, per_class, test_size, rng + run, protocol)
        if len(s.train) == 0 or len(s.test) == 0 or len(np.unique(labels[s.train])) < 2:
            raise ValueError("degenerate split: need training nodes of at least two classes and test nodes")
        accs.append(probe_accuracy(h, labels, s, **probe_kw))
    accs = np.array(accs)
    return Metrics(
        "node",
        {"accuracy_mean": float(accs.mean()), "accuracy_std": float(accs.std()), "accuracies": accs.tolist()},
        runs,
        rng,
    )


# ---------------------------------------------------------------------------
# link prediction


@dataclass(frozen=True, eq=False)
class LinkSplit:
    train_edges: np.ndarray
    val_pos: np.ndarray
    val_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray

    def train_graph(self, g):
        return g.with_edges(self.train_edges)


def _sample_non_edges(n, count, forbidden, rng):
    out = []
    seen = set(forbidden)
    if n * (n - 1) // 2 - len(seen) < count:
        raise ValueError("not enough non-edges to sample negatives")
    while len(out) < count:
        i, j = rng.integers(n, size=2)
        if i == j:
            continue
        pair = (int(min(i, j)), int(max(i, j)))
        if pair in seen:
            continue
        seen.add(pair)
        out.append(pair)
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def make_link_split(g, val_frac=0.05, test_frac=0.10, rng=None):
    """Hold out edges as val/test positives with as many sampled non-edges."""
    rng = np.random.default_rng(rng)
    m = g.n_edges
    n_val = int(np.floor(val_frac * m))
    n_test = int(np.floor(test_frac * m))
    if n_val < 1 or n_test < 1 or n_val + n_test >= m:
        raise ValueError(f"cannot hold out {val_frac:g}+{test_frac:g} of {m} edges")
    order = rng.permutation(m)
    val_pos = g.edges[np.sort(order[:n_val])]
    test_pos = g.edges[np.sort(order[n_val : n_val + n_test])]
    train = g.edges[np.sort(order[n_val + n_test :])]
    negs = _sample_non_edges(g.n, n_val + n_test, map(tuple, g.edges.tolist()), rng)
    return LinkSplit(train, val_pos, negs[:n_val], test_pos, negs[n_val:])


def pair_logits(h, pairs):
    return np.einsum("ij,ij->i", h[pairs[:, 0]], h[pairs[:, 1]])


def link_scores(h, pos, neg):
    """(AUC, AP) of sigmoid(h_i . h_j) scores for positives vs negatives.

    The metrics are computed on the dot products: sigmoid is strictly
    increasing, and ranking before it avoids ties from saturation.
    """
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("empty link split")
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    s = np.concatenate([pair_logits(h, pos), pair_logits(h, neg)])
    return auc_score(y, s), average_precision(y, s)


def sigmoid_scores(h, pairs):
    return expit(pair_logits(h, pairs))


def link_predict(embeddings, splits):
    """AUC/AP over runs; ``embeddings[r]`` must come from ``splits[r]``'s train graph."""
    if isinstance(splits, LinkSplit):
        embeddings, splits = [embeddings], [splits]
    if len(embeddings) != len(splits) or not splits:
        raise ValueError("need one embedding matrix per split")
    aucs, aps = [], []
    for h, s in zip(embeddings, splits):
        auc, ap = link_scores(np.asarray(h, dtype=np.float64), s.test_pos, s.test_neg)
        aucs.append(auc)
        aps.append(ap)
    aucs, aps = np.array(aucs), np.array(aps)
    values = {
        "auc_mean": float(aucs.mean()),
        "auc_std": float(aucs.std()),
        "ap_mean": float(aps.mean()),
        "ap_std": float(aps.std()),
        "aucs": aucs.tolist(),
        "aps": aps.tolist(),
    }
    return Metrics("link", values, len(splits), 0)


# ---------------------------------------------------------------------------
# metrics


def auc_score(y_true, scores):
    """ROC AUC; tied scores count one half."""
    return float(roc_auc_score(y_true, scores))


def average_precision(y_true, scores):
    """Step-interpolated area under the precision-recall curve."""
    return float(average_precision_score(y_true, scores))


def cluster_accuracy(y_true, y_pred):
    """Accuracy under the best one-to-one cluster/class matching."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes, t = np.unique(y_true, return_inverse=True)
    clusters, p = np.unique(y_pred, return_inverse=True)
    counts = np.zeros((len(clusters), len(classes)), dtype=np.int64)
    np.add.at(counts, (p, t), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum() / len(y_true))


def nmi(y_true, y_pred):
    return float(normalized_mutual_info_score(y_true, y_pred, average_method="arithmetic"))


def ari(y_true, y_pred):
    return float(adjusted_rand_score(y_true, y_pred))


def community_detect(h, labels, k=None, rng=0, n_init=10):
    """k-means on the embeddings of labeled nodes, scored by ACC/NMI/ARI."""
    labels = np.asarray(labels)
    keep = labels >= 0
    x = np.asarray(h, dtype=np.float64)[keep]
    y = labels[keep]
    if k is None:
        k = len(np.unique(y))
    if k > len(y):
        raise ValueError(f"k={k} exceeds {len(y)} labeled nodes")
    pred = kmeans_fit(x, k, rng, n_init=n_init).assignments
    values = {"acc": cluster_accuracy(y, pred), "nmi": nmi(y, pred), "ari": ari(y, pred)}
    return Metrics("community", values, 1, rng if isinstance(rng, int) else 0)

