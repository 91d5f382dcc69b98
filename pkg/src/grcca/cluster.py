"""k-means (k-means++ seeding, Lloyd iterations) and the cluster memory bank."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted


@dataclass
class ClusterState:
    prototypes: np.ndarray
    assignments: np.ndarray
    inertia: float

    @property
    def k(self):
        return self.prototypes.shape[0]


def _sq_dists(x, c):
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _inertia(x, c, labels):
    diff = x - c[labels]
    return float(np.sum(diff * diff))


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[j : j + 1]).ravel())
    return centers


def _lloyd(x, centers, max_iters, tol):
    """Lloyd iterations from ``centers``.

    Stops once the squared centroid shift drops below ``tol`` and a fresh
    assignment leaves the partition unchanged, so the returned centroids
    are the means of the returned clusters.
    """
    k = centers.shape[0]
    prev_inertia = np.inf
    scale = max(1.0, float(np.sum(x * x)))
    labels = np.argmin(_sq_dists(x, centers), axis=1)
    for _ in range(max_iters):
        inertia = _inertia(x, centers, labels)
        assert inertia <= prev_inertia + 1e-9 * scale, "Lloyd step increased inertia"
        prev_inertia = inertia
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new_centers = centers.copy()
        filled = counts > 0
        new_centers[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            far = np.sum((x - new_centers[labels]) ** 2, axis=1)
            for j in empty:
                i = int(np.argmax(far))
                new_centers[j] = x[i]
                labels[i] = j
                far[i] = -1.0
        shift = float(np.sum((new_centers - centers) ** 2))
        centers = new_centers
        new_labels = np.argmin(_sq_dists(x, centers), axis=1)
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable and shift < tol:
            break
    return centers, labels, _inertia(x, centers, labels)


def _hartigan(x, labels, k, max_sweeps=100):
    """Single-point transfers that strictly lower the inertia.

    Moving point i from cluster a to l changes the inertia by
    n_l/(n_l+1) |x_i - c_l|^2 - n_a/(n_a-1) |x_i - c_a|^2. The fixed
    points are also Lloyd fixed points, so every point stays with its
    nearest centroid and the centroids stay cluster means.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    rows = np.arange(x.shape[0])
    for _ in range(max_sweeps):
        # screen all points at once, then move candidates one at a time
        d = _sq_dists(x, sums / counts[:, None])
        own = counts[labels]
        stay = np.where(own > 1, own / np.maximum(own - 1.0, 1.0) * d[rows, labels], -np.inf)
        move = counts / (counts + 1.0) * d
        move[rows, labels] = np.inf
        candidates = np.flatnonzero(move.min(axis=1) < stay * (1.0 - 1e-12))
        if candidates.size == 0:
            break
        for i in candidates:
            a = labels[i]
            if counts[a] <= 1:
                continue
            di = np.sum((x[i] - sums / counts[:, None]) ** 2, axis=1)
            gain_to = counts / (counts + 1.0) * di
            gain_to[a] = np.inf
            j = int(np.argmin(gain_to))
            if gain_to[j] < counts[a] / (counts[a] - 1.0) * di[a] * (1.0 - 1e-12):
                counts[a] -= 1.0
                counts[j] += 1.0
                sums[a] -= x[i]
                sums[j] += x[i]
                labels[i] = j
    centers = sums / counts[:, None]
    return centers, labels, _inertia(x, centers, labels)


def kmeans_fit(data, k, rng=None, max_iters=100, tol=1e-6, n_init=1, refine=True):
    """Fit k-means and return the best of ``n_init`` seeded runs.

    Ties in the nearest-centroid rule go to the lowest cluster index.
    Clusters that empty out are reseeded at the point farthest from its
    own centroid. With ``refine`` each Lloyd solution is polished by
    single-point (Hartigan) transfers, which escape many of Lloyd's
    poor fixed points.
    """
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(rng)
    best = None
    for _ in range(n_init):
        centers, labels, inertia = _lloyd(x, _kmeans_pp(x, k, rng), max_iters, tol)
        if refine and np.bincount(labels, minlength=k).min() > 0:
            polished = _hartigan(x, labels, k)
            assert polished[2] <= inertia + 1e-9 * max(1.0, inertia), "transfer increased inertia"
            centers, labels, inertia = polished
        if best is None or inertia < best.inertia:
            best = ClusterState(centers, labels, inertia)
    if np.bincount(best.assignments, minlength=k).min() == 0:
        warnings.warn("k-means left an empty cluster (fewer distinct points than k)")
    return best


class KMeans(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans_fit`."""

    def __init__(self, n_clusters=8, max_iter=100, tol=1e-6, n_init=1, refine=True, random_state=None):
        self.n_clusters = n_clusters
        self.refine = refine
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        state = kmeans_fit(X, self.n_clusters, self.random_state, self.max_iter, self.tol, self.n_init, self.refine)
        self.cluster_centers_ = state.prototypes
        self.labels_ = state.assignments
        self.inertia_ = state.inertia
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        return np.argmin(_sq_dists(X, self.cluster_centers_), axis=1)


# ---------------------------------------------------------------------------
# multi-clustering and memory bank


def l2_normalize(x, eps=1e-12):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, eps)


def multi_cluster(z_v, z_u, k, h, rng=None, spherical=True, **kmeans_kw):
    """``h`` independent k-means runs per view, one rng stream each.

    With ``spherical`` the rows are L2-normalized before clustering and
    the prototypes are re-normalized afterwards.

    Returns a list of ``(state_v, state_u)`` pairs ordered by run index.
    """
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    rng = np.random.default_rng(rng)
    streams = rng.spawn(2 * h)
    if spherical:
        z_v, z_u = l2_normalize(z_v), l2_normalize(z_u)
    runs = []
    for i in range(h):
        pair = []
        for z, stream in ((z_v, streams[2 * i]), (z_u, streams[2 * i + 1])):
            state = kmeans_fit(z, k, stream, **kmeans_kw)
            if spherical:
                state.prototypes = l2_normalize(state.prototypes)
            pair.append(state)
        runs.append(tuple(pair))
    return runs


@dataclass
class MemoryBank:
    z_v: np.ndarray | None = None
    z_u: np.ndarray | None = None

    @property
    def ready(self):
        return self.z_v is not None and self.z_u is not None

    def update(self, z_v, z_u):
        if self.ready and (z_v.shape != self.z_v.shape or z_u.shape != self.z_u.shape):
            raise ValueError("memory bank shapes are fixed across epochs")
        self.z_v, self.z_u = z_v, z_u


def bank_source(mode, bank, z_v, z_u):
    """Matrices to cluster: the bank (``async``) or the current ones (``sync``)."""
    if mode == "sync":
        return z_v, z_u
    if mode == "async":
        if bank is None or not bank.ready:
            raise RuntimeError("asynchronous clustering requested before the memory bank was initialized")
        return bank.z_v, bank.z_u
    raise ValueError(f"mode must be 'async' or 'sync', got {mode!r}")
