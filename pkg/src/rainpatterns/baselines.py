"""Reference methods: k-means, spectral clustering, EOF basis, LASSO fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import HIGH, LOW


@dataclass
class ClusteringResult:
    """Dense 1-based labels with optional cluster centers and state patterns."""

    labels: np.ndarray
    centers: np.ndarray | None = None
    state_patterns: np.ndarray | None = None
    objective: float | None = None
    objective_history: np.ndarray | None = None

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max())


@dataclass
class EofBasis:
    """Orthonormal eigenvectors of the sample covariance, variance-ordered."""

    vectors: np.ndarray      # (D, D), columns are modes
    eigenvalues: np.ndarray  # (D,), descending, non-negative
    mean: np.ndarray         # (D,)


def _plusplus_seeds(vectors: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding: spread initial centers by squared distance."""
    n = vectors.shape[0]
    centers = np.empty((k, vectors.shape[1]))
    centers[0] = vectors[rng.integers(n)]
    d2 = ((vectors - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = vectors[rng.integers(n)]
        else:
            cum = np.cumsum(d2)
            centers[j] = vectors[np.searchsorted(cum, rng.random() * total)]
        d2 = np.minimum(d2, ((vectors - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(vectors: np.ndarray, centers: np.ndarray, max_iter: int):
    n, k = vectors.shape[0], centers.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    history = []
    for _ in range(max_iter):
        d2 = ((vectors[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        cost = d2[np.arange(n), new_labels]
        history.append(float(cost.sum()))
        cost = cost.copy()
        for j in range(k):
            sel = new_labels == j
            if sel.any():
                centers[j] = vectors[sel].mean(axis=0)
            else:
                # empty cluster: re-seed at the point farthest from its center
                far = int(cost.argmax())
                centers[j] = vectors[far]
                new_labels[far] = j
                cost[far] = -1.0  # keep later reseeds off this point
        if (new_labels == labels).all() and len(history) > 1:
            labels = new_labels
            break
        labels = new_labels
    d2 = ((vectors[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    history.append(float(d2[np.arange(n), labels].sum()))
    return labels, centers, history


def kmeans(vectors: np.ndarray, k: int, seed: int = 0, n_restarts: int = 10,
           max_iter: int = 500) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding, best of ``n_restarts``."""
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in 1..{n}, got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        centers = _plusplus_seeds(vectors, k, rng)
        labels, centers, history = _lloyd(vectors, centers.copy(), max_iter)
        if best is None or history[-1] < best[2][-1]:
            best = (labels, centers, history)
    labels, centers, history = best
    # drop empty clusters (possible only with duplicate points), keep dense ids
    used, labels = np.unique(labels, return_inverse=True)
    return ClusteringResult(labels=labels + 1, centers=centers[used],
                            objective=history[-1],
                            objective_history=np.array(history))


def cluster_means(vectors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean vector of each cluster, rows ordered by label."""
    k = int(labels.max())
    out = np.empty((k, vectors.shape[1]))
    for j in range(1, k + 1):
        out[j - 1] = vectors[labels == j].mean(axis=0)
    return out


def derive_state_patterns(centers: np.ndarray,
                          column_means: np.ndarray) -> np.ndarray:
    """Binarise cluster centers against per-column means (ties go low)."""
    return np.where(centers > column_means[None, :], HIGH, LOW).astype(np.int8)


def similarity_euclidean(vectors: np.ndarray, tau: float | None = None) -> np.ndarray:
    """exp(-distance / tau) similarity; tau defaults to the median distance."""
    vectors = np.asarray(vectors, dtype=float)
    sq = (vectors * vectors).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (vectors @ vectors.T)
    dist = np.sqrt(np.maximum(d2, 0.0))
    if tau is None:
        off = dist[np.triu_indices(len(dist), k=1)]
        tau = float(np.median(off)) if off.size else 1.0
        if tau <= 0:
            tau = 1.0
    w = np.exp(-dist / tau)
    return (w + w.T) / 2.0


def similarity_hamming(binary_vectors: np.ndarray) -> np.ndarray:
    """1 - normalised Hamming distance between binary state vectors."""
    z = np.asarray(binary_vectors)
    n, d = z.shape
    same = np.zeros((n, n))
    for code in (HIGH, LOW):
        m = (z == code).astype(float)
        same += m @ m.T
    return same / d


def spectral_cluster(similarity: np.ndarray, k: int, seed: int = 0) -> ClusteringResult:
    """Normalised-Laplacian spectral clustering of a similarity matrix.

    Takes the k eigenvectors of the symmetric normalised Laplacian with the
    smallest eigenvalues, unit-normalises the rows, and k-means them.
    """
    w = np.asarray(similarity, dtype=float)
    n = w.shape[0]
    if w.shape != (n, n):
        raise ValidationError("similarity must be square")
    if not np.allclose(w, w.T, atol=1e-10):
        raise ValidationError("similarity must be symmetric")
    if (w < 0).any():
        raise ValidationError("similarity must be non-negative")
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in 1..{n}, got {k}")
    deg = w.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    lap = np.eye(n) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    vals, vecs = np.linalg.eigh((lap + lap.T) / 2.0)
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = np.divide(emb, norms, out=emb.copy(), where=norms > 0)
    km = kmeans(emb, k, seed=seed)
    return ClusteringResult(labels=km.labels)


def eof_decompose(drvs: np.ndarray) -> EofBasis:
    """Eigendecompose the spatial sample covariance of the daily vectors.

    ``drvs`` is the (locations x days) matrix; covariance is taken over days
    with the n-1 convention.  Eigenvalues come out descending with tiny
    negative round-off clipped to zero.
    """
    x = np.asarray(drvs, dtype=float)
    mean = x.mean(axis=1)
    if x.shape[1] > 1:
        anom = x - mean[:, None]
        cov = anom @ anom.T / (x.shape[1] - 1)
    else:
        cov = np.zeros((x.shape[0], x.shape[0]))
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    return EofBasis(vectors=vecs[:, order],
                    eigenvalues=np.maximum(vals[order], 0.0),
                    mean=mean)


def lasso_fit(target: np.ndarray, basis: EofBasis, reg: float,
              max_iter: int = 1000, tol: float = 1e-8) -> np.ndarray:
    """L1-regularised regression of one daily vector on the EOF modes.

    Cyclic coordinate descent with soft thresholding on the mean-removed
    target; with an orthonormal basis each pass lands on the closed-form
    soft-thresholded projections.
    """
    if reg < 0:
        raise ValidationError("regularisation weight must be non-negative")
    phi = basis.vectors
    r = np.asarray(target, dtype=float) - basis.mean
    d = phi.shape[1]
    coef = np.zeros(d)
    resid = r.copy()
    thresh = reg / 2.0
    for _ in range(max_iter):
        max_change = 0.0
        for j in range(d):
            old = coef[j]
            raw = old + phi[:, j] @ resid
            new = np.sign(raw) * max(abs(raw) - thresh, 0.0)
            if new != old:
                resid += phi[:, j] * (old - new)
                coef[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            break
    return coef
