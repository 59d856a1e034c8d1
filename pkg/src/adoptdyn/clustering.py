"""K-means with k-means++ seeding, silhouette scores and the elbow/silhouette sweep."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import NUMBA_AVAILABLE, njit
from .errors import DegenerateData, SingleCluster


@njit(cache=True)
def _assign_nb(X, C):
    n, k = X.shape[0], C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    for i in range(n):
        bi = 0
        bd = np.inf
        for j in range(k):
            acc = 0.0
            for f in range(X.shape[1]):
                diff = X[i, f] - C[j, f]
                acc += diff * diff
            if acc < bd:
                bd = acc
                bi = j
        labels[i] = bi
        best[i] = bd
    return labels, best


def _assign_np(X, C):
    D = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)
    labels = D.argmin(axis=1)
    return labels, D[np.arange(X.shape[0]), labels]


@njit(cache=True)
def _silhouette_nb(X, labels, k):
    n = X.shape[0]
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        counts[labels[i]] += 1
    out = np.zeros(n)
    sums = np.empty(k)
    for i in range(n):
        sums[:] = 0.0
        for j in range(n):
            if j == i:
                continue
            acc = 0.0
            for f in range(X.shape[1]):
                diff = X[i, f] - X[j, f]
                acc += diff * diff
            sums[labels[j]] += np.sqrt(acc)
        own = labels[i]
        if counts[own] <= 1:
            out[i] = 0.0
            continue
        a = sums[own] / (counts[own] - 1)
        b = np.inf
        for c in range(k):
            if c != own and counts[c] > 0:
                b = min(b, sums[c] / counts[c])
        denom = max(a, b)
        out[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return out


def _silhouette_np(X, labels, k):
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((X.shape[0], k))
    for c in range(k):
        sums[:, c] = D[:, labels == c].sum(axis=1)
    idx = np.arange(X.shape[0])
    own = counts[labels]
    a = np.divide(sums[idx, labels], own - 1, out=np.zeros(X.shape[0]), where=own > 1)
    mean_other = np.where(counts[None, :] > 0, sums / np.maximum(counts, 1)[None, :], np.inf)
    mean_other[idx, labels] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.divide(b - a, denom, out=np.zeros_like(a), where=denom > 0)
    s[own <= 1] = 0.0
    return s


def _assign(X, C):
    return _assign_nb(X, C) if NUMBA_AVAILABLE else _assign_np(X, C)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float
    restart: int
    iterations: int


def _plusplus(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centers.append(X[i])
        d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, C, max_iter):
    labels = None
    for it in range(1, max_iter + 1):
        new, d2 = _assign(X, C)
        C = C.copy()
        for j in range(C.shape[0]):
            members = new == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                # empty cluster: move it onto the worst-fitted point
                far = int(np.argmax(d2))
                C[j] = X[far]
                d2[far] = 0.0
                new[far] = j
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    labels, d2 = _assign(X, C)
    return labels, C, float(d2.sum()), it


def kmeans(data, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """Best-of-``restarts`` Lloyd iterations from k-means++ seeds.

    Restart ``r`` draws from ``default_rng([seed, r])``; ties in WCSS keep the
    lowest restart index.
    """
    X = np.ascontiguousarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("data must be a 2-D array")
    if k < 1 or X.shape[0] < k:
        raise ValueError(f"need 1 <= k <= rows (k={k}, rows={X.shape[0]})")
    distinct = np.unique(X, axis=0).shape[0]
    if distinct < k:
        raise DegenerateData(f"only {distinct} distinct points for k={k}")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, C, wcss, its = _lloyd(X, _plusplus(X, k, rng), max_iter)
        if best is None or wcss < best.wcss:
            best = KMeansResult(labels, C, wcss, r, its)
    return best


def silhouette_samples(data, labels) -> np.ndarray:
    X = np.ascontiguousarray(data, dtype=np.float64)
    labels = np.asarray(labels)
    _, codes = np.unique(labels, return_inverse=True)
    k = int(codes.max()) + 1 if codes.size else 0
    if k < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    codes = codes.astype(np.int64)
    return _silhouette_nb(X, codes, k) if NUMBA_AVAILABLE else _silhouette_np(X, codes, k)


def silhouette(data, labels) -> float:
    """Mean silhouette coefficient; points in singleton clusters score 0."""
    return float(silhouette_samples(data, labels).mean())


@dataclass
class ClusterDiagnostics:
    k_range: list
    wcss: dict
    silhouette: dict
    chosen_k: int
    assignments: np.ndarray = field(repr=False)

    def best_silhouette_k(self) -> int:
        return max(self.silhouette, key=lambda k: (self.silhouette[k], -k))

    def rows(self):
        for k in self.k_range:
            yield k, self.wcss[k], self.silhouette.get(k)


def cluster_sweep(data, k_range=range(1, 10), seed: int = 0, restarts: int = 10, chosen_k: int = 5) -> ClusterDiagnostics:
    """WCSS for every k and silhouette for k >= 2; assignments are for ``chosen_k``."""
    X = np.asarray(data, dtype=float)
    wcss, sil, chosen = {}, {}, None
    for k in k_range:
        res = kmeans(X, k, seed=seed, restarts=restarts)
        wcss[k] = res.wcss
        if k >= 2:
            sil[k] = silhouette(X, res.labels)
        if k == chosen_k:
            chosen = res.labels
    if chosen is None:
        chosen = kmeans(X, chosen_k, seed=seed, restarts=restarts).labels
    return ClusterDiagnostics(list(k_range), wcss, sil, chosen_k, chosen)
