"""Classical outlier baselines (LOF, DBSCAN) and a Mahalanobis compactness
metric, for comparison against identity discovery."""

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .discovery import EmbeddingMatrix, select_smallest
from .errors import ConfigError, DimensionError, NumericalError
from .linalg import as_matrix

NOISE = -1
DEFAULT_MIN_PTS = 4
DEFAULT_SHRINKAGE = 0.1


@dataclass
class OutlierLabels:
    labels: np.ndarray  # cluster index >= 0, or NOISE
    scores: Optional[np.ndarray] = None

    @property
    def n_clusters(self):
        return int(self.labels.max() + 1) if self.labels.size else 0

    @property
    def noise(self):
        return self.labels == NOISE


def _values(e):
    return e.values if isinstance(e, EmbeddingMatrix) else as_matrix(e)


def pairwise_distances(x):
    return squareform(pdist(x, metric="euclidean"))


def default_k_neighbors(m):
    return max(5, m // 10)


def default_eps(e):
    x = _values(e)
    if x.shape[0] < 2:
        raise DimensionError("default eps needs at least two rows")
    dists = pdist(x, metric="euclidean")
    eps = 0.5 * float(np.median(dists))
    if eps > 0.0:
        return eps
    # over half the pairs coincide: fall back to the widest gap, or any
    # positive radius when all rows are equal
    return float(dists.max()) or 1.0


def lof_scores(e, k_neighbors=None):
    """Local outlier factor for each row (Breunig et al. definition).

    The k-distance neighbourhood includes every point tied with the k-th
    nearest neighbour. Zero-distance neighbourhoods give infinite local
    density; a ratio of two infinite densities counts as 1.
    """
    x = _values(e)
    m = x.shape[0]
    if k_neighbors is None:
        k_neighbors = default_k_neighbors(m)
    if not (2 <= k_neighbors < m):
        raise ConfigError(f"k_neighbors={k_neighbors} outside [2, {m - 1}]")
    dist = pairwise_distances(x)
    others = dist.copy()
    np.fill_diagonal(others, np.inf)
    kdist = np.sort(others, axis=1)[:, k_neighbors - 1]
    neigh = others <= kdist[:, None]
    reach = np.maximum(dist, kdist[None, :])
    counts = neigh.sum(axis=1)
    mean_reach = np.where(neigh, reach, 0.0).sum(axis=1) / counts
    with np.errstate(divide="ignore"):
        lrd = np.where(mean_reach > 0.0, 1.0 / mean_reach, np.inf)
    scores = np.empty(m)
    for p in range(m):
        ratios = []
        for o in np.flatnonzero(neigh[p]):
            if np.isinf(lrd[o]) and np.isinf(lrd[p]):
                ratios.append(1.0)
            else:
                ratios.append(lrd[o] / lrd[p])
        scores[p] = np.mean(ratios)
    return scores


def dbscan(e, eps=None, min_pts=DEFAULT_MIN_PTS):
    """DBSCAN with Euclidean distance; a point's neighbourhood includes itself.

    Points are visited in index order and clusters numbered in the order
    they are first opened, so labels are deterministic. A border point joins
    the first cluster that reaches it.
    """
    x = _values(e)
    if eps is None:
        eps = default_eps(x)
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ConfigError(f"min_pts must be >= 1, got {min_pts}")
    m = x.shape[0]
    adjacency = pairwise_distances(x) <= eps
    core = adjacency.sum(axis=1) >= min_pts
    labels = np.full(m, NOISE, dtype=np.int64)
    cluster = 0
    for start in range(m):
        if labels[start] != NOISE or not core[start]:
            continue
        labels[start] = cluster
        queue = deque([start])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in np.flatnonzero(adjacency[p]):
                if labels[q] == NOISE:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1
    return OutlierLabels(labels)


def _mahalanobis_sq(x, reference, shrinkage):
    dev = x - x.mean(axis=0)
    # spread at rounding level (e.g. identical rows whose mean is inexact)
    if np.abs(dev).max() <= 64 * np.finfo(float).eps * np.abs(x).max():
        return np.zeros(x.shape[0])
    mr, d = reference.shape
    # unbiased sample covariance S = C^T C with C = centered / sqrt(mr - 1)
    c = (reference - reference.mean(axis=0)) / np.sqrt(mr - 1)
    tau = float(np.sum(c * c)) / d  # trace(S) / d
    a = 1.0 - shrinkage
    b = shrinkage * tau
    if d <= mr:
        cov = a * (c.T @ c) + b * np.eye(d)
        evals, evecs = np.linalg.eigh(cov)
        if evals[0] <= max(evals[-1], 0.0) * 1e-12:
            raise NumericalError(
                "shrunk covariance is singular; use a positive shrinkage"
            )
        proj = dev @ evecs
        return np.sum(proj * proj / evals, axis=1)
    if b <= 0.0:
        raise NumericalError(
            "covariance is singular (more dimensions than samples); "
            "use a positive shrinkage"
        )
    # Woodbury through the small Gram matrix G = C C^T = Q diag(lam) Q^T:
    # x^T (a C^T C + b I)^-1 x = (|x|^2 - a sum_k w_k^2 / (b + a lam_k)) / b
    lam, q = np.linalg.eigh(c @ c.T)
    lam = np.maximum(lam, 0.0)
    w = (dev @ c.T) @ q
    inner = np.sum(w * w / (b + a * lam)[None, :], axis=1)
    return (np.einsum("ij,ij->i", dev, dev) - a * inner) / b


def mahalanobis_distances(e, shrinkage=DEFAULT_SHRINKAGE, reference=None):
    """Mahalanobis distance of each row of ``e`` to the mean of ``e``.

    The covariance comes from ``reference`` (default: ``e`` itself).
    """
    x = _values(e)
    ref = x if reference is None else _values(reference)
    if x.shape[0] < 2 or ref.shape[0] < 2:
        raise DimensionError("Mahalanobis compactness needs at least two rows")
    if ref.shape[1] != x.shape[1]:
        raise DimensionError("reference has a different dimension")
    if not (0.0 <= shrinkage <= 1.0):
        raise ConfigError(f"shrinkage must be in [0, 1], got {shrinkage}")
    return np.sqrt(np.maximum(_mahalanobis_sq(x, ref, shrinkage), 0.0))


def mahalanobis_compactness(e, shrinkage=DEFAULT_SHRINKAGE, reference=None):
    """Mean Mahalanobis distance from each row to the row mean; lower is
    more compact.

    The covariance is the unbiased sample covariance ``S`` of ``reference``
    (``e`` itself by default), shrunk toward ``trace(S)/d * I``:
    ``(1 - shrinkage) * S + shrinkage * trace(S)/d * I``. Passing the same
    reference for several subsets measures them all in one metric.
    """
    return float(np.mean(mahalanobis_distances(e, shrinkage, reference)))


def filter_by_scores(e, scores, keep):
    """Keep the ``keep`` rows with the smallest scores, in input order."""
    if not isinstance(e, EmbeddingMatrix):
        e = EmbeddingMatrix(e)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (e.m,):
        raise DimensionError(f"{scores.shape[0]} scores for {e.m} rows")
    if not (1 <= keep <= e.m):
        raise ConfigError(f"keep={keep} outside [1, {e.m}]")
    return e.take(select_smallest(scores, keep))


def filter_by_labels(e, labels):
    """Keep every row not labelled noise."""
    if not isinstance(e, EmbeddingMatrix):
        e = EmbeddingMatrix(e)
    labels = labels.labels if isinstance(labels, OutlierLabels) else np.asarray(labels)
    return e.take(np.flatnonzero(labels != NOISE))
