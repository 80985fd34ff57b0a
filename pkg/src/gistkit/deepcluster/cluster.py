"""K-means, silhouette and adjusted Rand index."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import adjusted_rand_score, silhouette_score

__all__ = ["KMeansResult", "kmeans", "assign", "silhouette", "ari", "FAST_EVAL_CAP"]

FAST_EVAL_CAP = 5000


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(axis=1)[:, None] + (C * C).sum(axis=1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d, 0.0)


def assign(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid for every row (first one on ties)."""
    return np.argmin(_sq_dists(np.asarray(X, float), np.asarray(centroids, float)), axis=1)


def _inertia(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    return float(((X - C[labels]) ** 2).sum())


def _plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    C = np.empty((k, X.shape[1]))
    C[0] = X[rng.integers(n)]
    d = ((X - C[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d.sum()
        idx = rng.choice(n, p=d / total) if total > 0 else rng.integers(n)
        C[c] = X[idx]
        d = np.minimum(d, ((X - C[c]) ** 2).sum(axis=1))
    return C


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int) -> KMeansResult:
    k = C.shape[0]
    labels = assign(X, C)
    history = [_inertia(X, C, labels)]
    for _ in range(max_iter):
        newC = C.copy()
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                newC[c] = X[labels == c].mean(axis=0)
        for c in np.flatnonzero(counts == 0):
            # reseed an empty cluster at the point farthest from its centroid
            far = int(np.argmax(((X - newC[labels]) ** 2).sum(axis=1)))
            newC[c] = X[far]
            labels[far] = c
        new_labels = assign(X, newC)
        C = newC
        history.append(_inertia(X, C, new_labels))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(C, labels, history[-1], history)


def _fill_empty(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> KMeansResult | None:
    """Give every empty cluster the closest point of a multi-point cluster.

    Empty clusters survive Lloyd's iterations only when centroids coincide
    (duplicate points), so the move costs no inertia there.
    """
    k = C.shape[0]
    counts = np.bincount(labels, minlength=k)
    if counts.all():
        return None
    C, labels = C.copy(), labels.copy()
    for c in np.flatnonzero(counts == 0):
        movable = np.flatnonzero(counts[labels] > 1)
        if len(movable) == 0:
            break
        p = movable[np.argmin(((X[movable] - C[c]) ** 2).sum(axis=1))]
        src = labels[p]
        labels[p] = c
        counts[src] -= 1
        counts[c] += 1
        C[c] = X[p]
        C[src] = X[labels == src].mean(axis=0)
    return KMeansResult(C, labels, _inertia(X, C, labels))


def kmeans(
    X: np.ndarray,
    k: int,
    restarts: int = 20,
    seed: int = 0,
    max_iter: int = 300,
    init: np.ndarray | None = None,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by inertia.

    ``init`` (k x d) is tried as an extra starting point before the random ones.
    """
    X = np.asarray(X, dtype=float)
    if k <= 0:
        raise ValueError("k must be positive")
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the number of points ({X.shape[0]})")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    starts = [] if init is None else [np.asarray(init, dtype=float).copy()]
    starts += [None] * restarts
    for start in starts:
        C = _plusplus(X, k, rng) if start is None else start
        res = _lloyd(X, C, max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    assert best is not None
    repaired = _fill_empty(X, best.centroids, best.labels)
    if repaired is not None:
        best = KMeansResult(repaired.centroids, repaired.labels, repaired.inertia, best.history + [repaired.inertia])
    return best


def silhouette(
    X: np.ndarray, labels: np.ndarray, *, fast: bool = False, cap: int = FAST_EVAL_CAP, seed: int = 0
) -> float:
    """Mean Euclidean silhouette; ``fast`` evaluates a seeded subsample of at most ``cap`` rows."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("silhouette is undefined for a single cluster")
    if fast and len(labels) > cap:
        rows = np.sort(np.random.default_rng(seed).choice(len(labels), size=cap, replace=False))
        X, labels = X[rows], labels[rows]
        if len(np.unique(labels)) < 2:
            raise ValueError("subsample contains a single cluster")
    return float(silhouette_score(X, labels, metric="euclidean"))


def ari(labels_a, labels_b) -> float:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label sequences must have equal length")
    return float(adjusted_rand_score(a, b))
