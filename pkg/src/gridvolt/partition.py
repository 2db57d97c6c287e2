"""Spectral partition of feeder buses into voltage-control sub-networks.

The pipeline is: Gaussian affinity over rows of the V-Q sensitivity matrix,
symmetric normalized Laplacian, unit-row eigenvector embedding, k-means, and
Silhouette-based selection over a grid of cluster counts and kernel widths.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateClustering, EigenFailure, ZeroDegree
from .powerflow import base_case_sensitivity

DEFAULT_GAMMAS = (0.01, 0.1, 1.0)


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    w: np.ndarray
    sigma: float


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    vectors: np.ndarray
    eigenvalues: np.ndarray


@dataclass(eq=False)
class PartitionResult:
    assignment: np.ndarray
    k: int
    silhouette: float
    ncut: float
    sigma: float = float("nan")
    bus_ids: np.ndarray | None = None
    scan: list = field(default_factory=list)

    def members(self, cluster: int) -> np.ndarray:
        """Bus ids (or row indices when ids are unknown) of one cluster."""
        rows = np.flatnonzero(self.assignment == cluster)
        return rows if self.bus_ids is None else self.bus_ids[rows]

    def clusters(self) -> list[np.ndarray]:
        return [self.members(c) for c in range(self.k)]


def gamma_to_sigma(gamma: float) -> float:
    """Kernel width for ``exp(-gamma * d**2)``."""
    return float(np.sqrt(1.0 / (2.0 * gamma)))


def pairwise_sq_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return 0.5 * (d2 + d2.T)


def median_sigma(x: np.ndarray) -> float:
    d2 = pairwise_sq_distances(np.asarray(x, dtype=float))
    iu = np.triu_indices(len(d2), 1)
    return float(np.median(np.sqrt(d2[iu])))


def build_affinity(sens, sigma: float) -> AffinityMatrix:
    """Elementwise Gaussian kernel over sensitivity rows."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    x = getattr(sens, "s", sens)
    x = np.asarray(x, dtype=float)
    w = np.exp(-pairwise_sq_distances(x) / (2.0 * sigma * sigma))
    np.fill_diagonal(w, 1.0)
    return AffinityMatrix(w=w, sigma=float(sigma))


def build_normalized_laplacian(w) -> tuple[np.ndarray, np.ndarray]:
    """``D^-1/2 (D - W) D^-1/2`` and the degree vector."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    d = w.sum(axis=1)
    if np.any(d <= 0):
        raise ZeroDegree("affinity graph has a node with zero degree")
    inv_sqrt = 1.0 / np.sqrt(d)
    lap = np.diag(d) - w
    l_sym = inv_sqrt[:, None] * lap * inv_sqrt[None, :]
    return 0.5 * (l_sym + l_sym.T), d


def spectral_embed(l_sym: np.ndarray, k: int) -> SpectralEmbedding:
    n = l_sym.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    try:
        vals, vecs = np.linalg.eigh(l_sym)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    vecs = vecs[:, :k].copy()
    # Fix the sign of each eigenvector so the embedding is reproducible.
    for c in range(k):
        pivot = np.argmax(np.abs(vecs[:, c]))
        if vecs[pivot, c] < 0:
            vecs[:, c] = -vecs[:, c]
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return SpectralEmbedding(vectors=vecs / norms, eigenvalues=vals[:k].copy())


def _kmeans_pp(points, k, rng):
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total))
            idx = min(idx, n - 1)
        centers[c] = points[idx]
        closest = np.minimum(closest, np.sum((points - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(points, centers, max_iter, tol):
    k = len(centers)
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        new = centers.copy()
        for c in range(k):
            mask = labels == c
            if mask.any():
                new[c] = points[mask].mean(axis=0)
            else:
                # Empty cluster: reseed at the point farthest from its centroid.
                far = np.argmax(d2[np.arange(len(points)), labels])
                new[c] = points[far]
                labels[far] = c
        shift = np.max(np.sum((new - centers) ** 2, axis=1))
        centers = new
        if shift <= tol:
            break
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    for c in range(k):
        if not np.any(labels == c):
            far = int(np.argmax(d2[np.arange(len(points)), labels]))
            labels[far] = c
    wcss = float(sum(np.sum((points[labels == c] - points[labels == c].mean(axis=0)) ** 2)
                     for c in range(k)))
    return labels, wcss


def _canonical_labels(labels):
    """Relabel clusters in order of first appearance."""
    mapping = {}
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
    return np.array([mapping[lab] for lab in labels], dtype=int)


def kmeans(points, k: int, restarts: int = 10, seed: int = 0,
           max_iter: int = 300, tol: float = 1e-10) -> np.ndarray:
    """Best-of-``restarts`` Lloyd k-means with k-means++ seeding."""
    points = np.asarray(points, dtype=float)
    if k > len(points):
        raise ValueError("k must not exceed the number of points")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best, best_wcss = None, np.inf
    for _ in range(restarts):
        labels, wcss = _lloyd(points, _kmeans_pp(points, k, rng), max_iter, tol)
        if wcss < best_wcss - 1e-15:
            best, best_wcss = labels, wcss
    return _canonical_labels(best)


def silhouette_score(points, assignment) -> float:
    points = np.asarray(points, dtype=float)
    labels = np.asarray(assignment)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise DegenerateClustering("silhouette needs at least two clusters")
    dist = np.sqrt(pairwise_sq_distances(points))
    scores = np.zeros(len(points))
    for i in range(len(points)):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own == 1:
            continue
        a = dist[i, own].sum() / (n_own - 1)
        b = min(dist[i, labels == c].mean() for c in clusters if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def ncut_value(w, assignment) -> float:
    """Normalized cut ``1/2 sum_i cut(A_i, ~A_i) / vol(A_i)``."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    labels = np.asarray(assignment)
    d = w.sum(axis=1)
    total = 0.0
    for c in np.unique(labels):
        inside = labels == c
        total += w[np.ix_(inside, ~inside)].sum() / d[inside].sum()
    return 0.5 * total


def partition_once(x, k, sigma, seed=0, restarts=10, silhouette_features=None):
    aff = build_affinity(x, sigma)
    l_sym, _ = build_normalized_laplacian(aff)
    emb = spectral_embed(l_sym, k)
    labels = kmeans(emb.vectors, k, restarts=restarts, seed=seed)
    feats = x if silhouette_features is None else silhouette_features
    score = silhouette_score(feats, labels) if len(np.unique(labels)) > 1 else -1.0
    return labels, score, ncut_value(aff, labels)


def select_partition(sens, k_range=range(2, 9), sigmas=None, seed=0, restarts=10,
                     bus_ids=None) -> PartitionResult:
    """Scan ``(k, sigma)`` and keep the partition with the highest Silhouette.

    Ties go to the smaller ``k`` and then the smaller ``sigma``.  The full scan
    is kept on ``result.scan`` as ``(k, sigma, silhouette, ncut)`` rows.
    """
    x = np.asarray(getattr(sens, "s", sens), dtype=float)
    if sigmas is None:
        sigmas = [gamma_to_sigma(g) for g in DEFAULT_GAMMAS]
    k_values = list(k_range)
    if not k_values or not list(sigmas):
        raise ValueError("k_range and sigmas must be nonempty")
    scan = []
    best = None
    for k in k_values:
        for sigma in sigmas:
            labels, score, ncut = partition_once(x, k, sigma, seed=seed, restarts=restarts)
            scan.append((k, float(sigma), score, ncut))
            key = (-score, k, sigma)
            if best is None or key < best[0]:
                best = (key, labels, k, sigma, score, ncut)
    _, labels, k, sigma, score, ncut = best
    return PartitionResult(assignment=labels, k=k, silhouette=score, ncut=ncut,
                           sigma=float(sigma),
                           bus_ids=None if bus_ids is None else np.asarray(bus_ids),
                           scan=scan)


def partition_network(net, k_range=range(2, 9), sigmas=None, seed=0, restarts=10,
                      y=None) -> PartitionResult:
    """Base-case V-Q sensitivity of ``net``, then :func:`select_partition`."""
    sens = base_case_sensitivity(net, y)
    ids = [net.bus_ids[i] for i in sens.bus_index]
    return select_partition(sens.s, k_range, sigmas, seed=seed, restarts=restarts, bus_ids=ids)


def cluster_contiguity(net, result: PartitionResult) -> list[bool]:
    """Whether each cluster's buses induce a connected subgraph of the feeder."""
    f, t = net.branch_ends
    out = []
    for members in result.clusters():
        rows = {net.index_of(b) for b in members}
        adj = {r: [] for r in rows}
        for a, b in zip(f, t):
            if a in rows and b in rows:
                adj[a].append(b)
                adj[b].append(a)
        start = next(iter(rows))
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        out.append(len(seen) == len(rows))
    return out


def cluster_device_counts(net, result: PartitionResult) -> list[tuple[int, int]]:
    """``(n_svc, n_pv)`` per cluster."""
    counts = []
    for members in result.clusters():
        ids = set(int(b) for b in members)
        counts.append((sum(s.bus in ids for s in net.svcs), sum(p.bus in ids for p in net.pvs)))
    return counts


class SpectralPartitioner(ClusterMixin, BaseEstimator):
    """Estimator wrapper: ``fit(S)`` with S the V-Q sensitivity matrix.

    Parameters
    ----------
    k_min, k_max : int
        Inclusive range of cluster counts to scan.
    gammas : tuple of float
        Kernel coefficients ``gamma = 1 / (2 sigma**2)`` to scan.
    include_median : bool
        Also scan the median pairwise-distance width.
    restarts : int
        k-means restarts per grid point.
    random_state : int
        Seed for k-means.
    """

    def __init__(self, k_min=2, k_max=8, gammas=DEFAULT_GAMMAS, include_median=False,
                 restarts=10, random_state=0):
        self.k_min = k_min
        self.k_max = k_max
        self.gammas = gammas
        self.include_median = include_median
        self.restarts = restarts
        self.random_state = random_state

    def _sigmas(self, x):
        sigmas = [gamma_to_sigma(g) for g in self.gammas]
        if self.include_median:
            sigmas.append(median_sigma(x))
        return sigmas

    def fit(self, X, y=None, bus_ids=None):
        x = check_array(X, dtype=float, ensure_min_samples=2)
        if not 2 <= self.k_min <= self.k_max <= len(x):
            raise ValueError("require 2 <= k_min <= k_max <= n_samples")
        result = select_partition(x, range(self.k_min, self.k_max + 1), self._sigmas(x),
                                  seed=self.random_state, restarts=self.restarts,
                                  bus_ids=bus_ids)
        self.result_ = result
        self.labels_ = result.assignment
        self.n_clusters_ = result.k
        self.sigma_ = result.sigma
        self.silhouette_ = result.silhouette
        self.ncut_ = result.ncut
        self.scan_ = result.scan
        return self

    def scan_table(self):
        check_is_fitted(self, "scan_")
        return list(self.scan_)
