"""Opinion-similarity network and node centralities."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateProfiles, NonConvergence

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF = 0.9
DEFAULT_DAMPING = 0.85


@dataclass
class SimilarityGraph:
    kernel: np.ndarray
    W: np.ndarray
    sigma: float
    cutoff: float
    isolated: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.W.shape[0]


def pairwise_distances(profiles) -> np.ndarray:
    P = np.asarray(profiles, dtype=float)
    diff = P[:, None, :] - P[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def median_bandwidth(profiles) -> float:
    """Median Euclidean distance over unordered pairs of distinct communities."""
    P = np.asarray(profiles, dtype=float)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ValueError("need at least two profiles")
    D = pairwise_distances(P)
    iu = np.triu_indices(P.shape[0], k=1)
    dists = D[iu]
    if not np.any(dists > 0):
        raise DegenerateProfiles("all opinion profiles coincide; bandwidth would be zero")
    return float(np.median(dists))


def build_similarity(profiles, sigma: float, cutoff: float = DEFAULT_CUTOFF) -> SimilarityGraph:
    """RBF kernel on profile distances, zeroed beyond ``cutoff`` and on the diagonal,
    then row-normalised. A row with no neighbour inside the cutoff becomes a unit
    self-loop."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    D = pairwise_distances(profiles)
    K = np.where(D <= cutoff, np.exp(-(D ** 2) / (2.0 * sigma ** 2)), 0.0)
    np.fill_diagonal(K, 0.0)
    rows = K.sum(axis=1)
    isolated = np.flatnonzero(rows == 0.0).tolist()
    W = np.zeros_like(K)
    ok = rows > 0
    W[ok] = K[ok] / rows[ok, None]
    for i in isolated:
        W[i, i] = 1.0
    if isolated:
        logger.warning("communities %s have no neighbour within cutoff %.3g; using self-loops", isolated, cutoff)
    return SimilarityGraph(kernel=K, W=W, sigma=float(sigma), cutoff=float(cutoff), isolated=isolated)


def _matrix(graph):
    return graph.W if isinstance(graph, SimilarityGraph) else np.asarray(graph, dtype=float)


def in_degree_centrality(graph) -> tuple[np.ndarray, np.ndarray]:
    """Weighted in-degree (column sums of W) and the same vector normalised to sum 1."""
    W = _matrix(graph)
    raw = W.sum(axis=0)
    total = raw.sum()
    return raw, (raw / total if total > 0 else np.full(raw.size, 1.0 / raw.size))


def pagerank(graph, damping: float = DEFAULT_DAMPING, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Stationary distribution of the walk that follows W with probability ``damping``
    and teleports uniformly otherwise."""
    W = _matrix(graph)
    n = W.shape[0]
    P = W / np.where(W.sum(axis=1, keepdims=True) > 0, W.sum(axis=1, keepdims=True), 1.0)
    dangling = P.sum(axis=1) == 0
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (P.T @ pi + pi[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise NonConvergence(f"pagerank did not converge in {max_iter} iterations", last=pi)


def write_matrix_csv(path, W, ids=None) -> None:
    n = W.shape[0]
    ids = list(range(n)) if ids is None else list(ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["flat_id", *ids])
        for i in range(n):
            out.writerow([ids[i], *(repr(float(v)) for v in W[i])])


def write_centralities_csv(path, in_degree, pr, ids=None) -> None:
    n = len(in_degree)
    ids = list(range(n)) if ids is None else list(ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["flat_id", "in_degree", "pagerank"])
        for i in range(n):
            out.writerow([ids[i], repr(float(in_degree[i])), repr(float(pr[i]))])


def read_matrix_csv(path) -> np.ndarray:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])
