"""Kmeans over profile features and the clean-vs-perturbed agreement score."""
from __future__ import annotations

import csv
import itertools
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_rng
from .profiles import LabeledDataset, Taxonomy

__all__ = [
    "ClusteringResult",
    "KMeans",
    "kmeans",
    "elbow_scan",
    "matched_accuracy",
    "profile_features",
    "soft_profile_features",
    "clustering_utility",
    "write_clustering_csv",
]

# Exhaustive permutation search up to this many clusters.
_BRUTE_FORCE_MAX_K = 8


@dataclass
class ClusteringResult:
    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    iterations: int
    K: int
    wcss_history: list = field(default_factory=list, repr=False)


def _sq_dist(X, C, chunk=4096):
    # (n, K) squared distances; explicit differences avoid cancellation
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], chunk):
        out[s : s + chunk] = ((X[s : s + chunk, np.newaxis, :] - C[np.newaxis, :, :]) ** 2).sum(axis=2)
    return out


def _kmeans_pp(X, K, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def _repair_empty(X, labels, centroids, K):
    """Give each empty cluster the point farthest from its own centroid."""
    counts = np.bincount(labels, minlength=K)
    for j in np.flatnonzero(counts == 0):
        dist = ((X - centroids[labels]) ** 2).sum(axis=1)
        dist[counts[labels] < 2] = -1.0
        i = int(np.argmax(dist))
        if dist[i] < 0:
            break
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] = 1
    return labels


def _lloyd(X, K, rng, max_iters, tol):
    centroids = _kmeans_pp(X, K, rng)
    labels = None
    history = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        new_labels = np.argmin(_sq_dist(X, centroids), axis=1)
        new_labels = _repair_empty(X, new_labels, centroids, K)
        new_centroids = np.array(
            [X[new_labels == j].mean(axis=0) if (new_labels == j).any() else centroids[j] for j in range(K)]
        )
        wcss = float(((X - new_centroids[new_labels]) ** 2).sum())
        if history and wcss > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"WCSS increased from {history[-1]} to {wcss} at iteration {iterations}")
        history.append(wcss)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        unchanged = labels is not None and np.array_equal(labels, new_labels)
        centroids, labels = new_centroids, new_labels
        if shift < tol or unchanged:
            break
    return ClusteringResult(centroids, labels, history[-1], iterations, K, history)


def kmeans(points, K: int, seed=0, max_iters: int = 300, tol: float = 1e-8, n_init: int = 1) -> ClusteringResult:
    """Lloyd iterations from kmeans++ seeding; best of ``n_init`` restarts by WCSS."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("points must be a nonempty 2-D array")
    if not 1 <= K <= X.shape[0]:
        raise ValueError(f"K={K} must lie in [1, {X.shape[0]}]")
    rng = check_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        res = _lloyd(X, K, rng, max_iters, tol)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


class KMeans(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters=4, max_iter=300, tol=1e-8, n_init=1, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        res = kmeans(X, self.n_clusters, self.random_state, self.max_iter, self.tol, self.n_init)
        self.cluster_centers_ = res.centroids
        self.labels_ = res.assignments
        self.inertia_ = res.wcss
        self.n_iter_ = res.iterations
        self.wcss_history_ = res.wcss_history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmin(_sq_dist(X, self.cluster_centers_), axis=1)


def elbow_scan(points, k_range: Sequence[int], seed=0, n_init: int = 1) -> list:
    """WCSS for every K in ``k_range``, given as inclusive ``(lo, hi)`` or a ``range``."""
    if isinstance(k_range, range):
        ks = list(k_range)
    else:
        lo, hi = k_range
        ks = list(range(lo, hi + 1))
    if not ks:
        raise ValueError("empty k range")
    X = np.asarray(points, dtype=np.float64)
    return [(k, kmeans(X, k, seed=seed, n_init=n_init).wcss) for k in ks]


def matched_accuracy(reference, test, K: int) -> float:
    """Best agreement over relabelings of ``test`` onto ``reference``."""
    ref = np.asarray(reference, dtype=np.int64)
    tst = np.asarray(test, dtype=np.int64)
    if ref.shape != tst.shape:
        raise ValueError("assignment lists differ in length")
    if ref.size == 0:
        raise ValueError("empty assignment lists")
    if ref.min() < 0 or tst.min() < 0 or ref.max() >= K or tst.max() >= K:
        raise ValueError(f"assignments must lie in [0, {K})")
    contingency = np.zeros((K, K), dtype=np.int64)
    np.add.at(contingency, (tst, ref), 1)
    if K <= _BRUTE_FORCE_MAX_K:
        perms = np.array(list(itertools.permutations(range(K))))
        best = contingency[np.arange(K), perms].sum(axis=1).max()
    else:
        rows, cols = linear_sum_assignment(contingency, maximize=True)
        best = contingency[rows, cols].sum()
    return float(best) / ref.size


def profile_features(labels, taxonomy: Taxonomy) -> np.ndarray:
    """Concatenated one-hot blocks, one per category."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[np.newaxis, :]
    blocks = [np.eye(n)[labels[:, c]] for c, n in enumerate(taxonomy.class_counts)]
    return np.hstack(blocks)


def soft_profile_features(probas: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenated per-category probability vectors."""
    return np.hstack([np.asarray(p, dtype=np.float64) for p in probas])


def clustering_utility(
    dataset: LabeledDataset,
    pipeline: Union[np.ndarray, Callable[[LabeledDataset], np.ndarray]],
    K: int,
    seed=0,
    n_init: int = 1,
) -> float:
    """Agreement between clusterings of the true and the decoded profiles.

    ``pipeline`` is either the decoded label matrix or a callable that
    perturbs and decodes ``dataset`` into one.
    """
    decoded = pipeline(dataset) if callable(pipeline) else np.asarray(pipeline)
    if decoded.shape != dataset.labels.shape:
        raise ValueError(f"decoded labels have shape {decoded.shape}, expected {dataset.labels.shape}")
    clean = kmeans(profile_features(dataset.labels, dataset.taxonomy), K, seed=seed, n_init=n_init)
    noisy = kmeans(profile_features(decoded, dataset.taxonomy), K, seed=seed, n_init=n_init)
    return matched_accuracy(clean.assignments, noisy.assignments, K)


def write_clustering_csv(result: ClusteringResult, path) -> None:
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "wcss", "iterations"])
        w.writerow([result.K, repr(result.wcss), result.iterations])
        w.writerow(["index", "assignment"])
        for i, a in enumerate(result.assignments):
            w.writerow([i, int(a)])
