"""Iterative identity discovery.

Each round projects the current embedding set onto its dominant right
singular subspace, scores every row by its mean squared projection
residual and keeps the best ``floor(m * ratio)`` rows (at least
``min_keep``). The survivors of the last round are averaged.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .linalg import as_matrix, mean_row, thin_svd

ENERGY_FRACTION = 0.95


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Rows are identity embeddings; ``source_ids`` name the rows stably."""

    values: np.ndarray
    source_ids: tuple = None

    def __post_init__(self):
        values = as_matrix(self.values, "embedding matrix")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        ids = self.source_ids
        if ids is None:
            ids = tuple(range(values.shape[0]))
        else:
            ids = tuple(ids)
        if len(ids) != values.shape[0]:
            raise DimensionError(
                f"{len(ids)} source ids for {values.shape[0]} embeddings"
            )
        if len(set(ids)) != len(ids):
            raise ConfigError("source ids must be unique")
        object.__setattr__(self, "source_ids", ids)

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def take(self, rows):
        rows = list(rows)
        return EmbeddingMatrix(
            self.values[rows], tuple(self.source_ids[r] for r in rows)
        )


@dataclass(frozen=True)
class DiscoveryConfig:
    k: Optional[int] = None  # None: pick by ``k_rule`` each round
    k_rule: str = "gap"  # "gap" or "energy"
    ratio: float = 0.6
    iters: int = 3
    min_keep: int = 1
    normalize: bool = False  # unit-normalize rows before filtering

    def __post_init__(self):
        if self.k is not None and int(self.k) < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.k_rule not in ("gap", "energy"):
            raise ConfigError(f"unknown k_rule {self.k_rule!r}")
        if not (0.0 < float(self.ratio) <= 1.0):
            raise ConfigError(f"ratio must be in (0, 1], got {self.ratio}")
        if int(self.iters) < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if int(self.min_keep) < 1:
            raise ConfigError(f"min_keep must be >= 1, got {self.min_keep}")


@dataclass
class IterationRecord:
    kept_ids: tuple
    removed_ids: tuple
    errors: np.ndarray  # one per row entering the round
    k: int


@dataclass
class FilterReport:
    iterations: list
    final_embedding: np.ndarray
    retained_fraction: float
    kept_ids: tuple = field(default=())

    @property
    def retained(self):
        return len(self.kept_ids)


def energy_rank(singular_values, fraction=ENERGY_FRACTION):
    """Smallest k whose leading squared singular values reach ``fraction`` of
    the total, clamped to ``[1, q - 1]`` (``q`` = number of values)."""
    s2 = np.asarray(singular_values, dtype=np.float64) ** 2
    q = s2.size
    upper = max(1, q - 1)
    total = s2.sum()
    if total <= 0.0:
        return 1
    cum = np.cumsum(s2) / total
    k = int(np.searchsorted(cum, fraction - 1e-15) + 1)
    return min(max(k, 1), upper)


def gap_rank(singular_values):
    """k at the largest drop between consecutive squared singular values,
    clamped to ``[1, q - 1]``."""
    s2 = np.asarray(singular_values, dtype=np.float64) ** 2
    q = s2.size
    if q < 2 or s2[0] <= 0.0:
        return 1
    drops = s2[:-1] - s2[1:]
    k = int(np.argmax(drops) + 1)  # first maximum on ties
    return min(max(k, 1), max(1, q - 1))


def default_rank(singular_values, rule="gap"):
    if rule == "gap":
        return gap_rank(singular_values)
    if rule == "energy":
        return energy_rank(singular_values)
    raise ConfigError(f"unknown rank rule {rule!r}")


def _projector(v, k):
    vk = v[:, :k]
    return vk @ vk.T


def reconstruction_matrix(e, k, factors=None):
    """``W = V_k V_k^T`` for the top-``k`` right singular vectors of ``e``."""
    values = e.values if isinstance(e, EmbeddingMatrix) else as_matrix(e)
    m, d = values.shape
    if not (1 <= k <= min(m, d)):
        raise ConfigError(f"k={k} outside [1, {min(m, d)}]")
    if factors is None:
        factors = thin_svd(values)
    return _projector(factors.v, k)


def reconstruction_errors(e, w):
    """Per-row mean of squared residuals of ``e`` against ``e @ w``."""
    values = e.values if isinstance(e, EmbeddingMatrix) else as_matrix(e)
    w = np.asarray(w, dtype=np.float64)
    d = values.shape[1]
    if w.shape != (d, d):
        raise DimensionError(f"W has shape {w.shape}, expected {(d, d)}")
    residual = values - values @ w
    return np.mean(residual * residual, axis=1)


def keep_count(m, ratio, min_keep=1):
    return min(m, max(int(m * ratio), min_keep))


def select_smallest(scores, keep):
    """Row indices of the ``keep`` smallest scores, ties to the lower index,
    returned in ascending index order."""
    order = np.argsort(np.asarray(scores), kind="stable")
    return np.sort(order[:keep])


def _round(e, cfg):
    factors = thin_svd(e.values)
    q = min(e.m, e.d)
    if cfg.k is None:
        k = default_rank(factors.singular_values, cfg.k_rule)
    else:
        k = min(int(cfg.k), q)
    w = _projector(factors.v, k)
    errors = reconstruction_errors(e, w)
    kept = select_smallest(errors, keep_count(e.m, cfg.ratio, cfg.min_keep))
    mask = np.zeros(e.m, dtype=bool)
    mask[kept] = True
    record = IterationRecord(
        kept_ids=tuple(e.source_ids[i] for i in kept),
        removed_ids=tuple(e.source_ids[i] for i in np.flatnonzero(~mask)),
        errors=errors,
        k=k,
    )
    return e.take(kept), record


def _prepare(e, cfg):
    if not isinstance(e, EmbeddingMatrix):
        e = EmbeddingMatrix(e)
    if cfg.normalize:
        norms = np.linalg.norm(e.values, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        e = EmbeddingMatrix(e.values / norms, e.source_ids)
    return e


def filter_once(e, cfg=None):
    """One filtering round. Returns the surviving rows and the removed ids."""
    cfg = cfg or DiscoveryConfig()
    kept, record = _round(_prepare(e, cfg), cfg)
    return kept, record.removed_ids


def discover_identity(e, cfg=None):
    cfg = cfg or DiscoveryConfig()
    current = _prepare(e, cfg)
    m0 = current.m
    records = []
    for _ in range(int(cfg.iters)):
        current, record = _round(current, cfg)
        records.append(record)
    return FilterReport(
        iterations=records,
        final_embedding=mean_row(current.values),
        retained_fraction=current.m / m0,
        kept_ids=current.source_ids,
    )


def naive_average(e):
    values = e.values if isinstance(e, EmbeddingMatrix) else as_matrix(e)
    return mean_row(values)


def retained_chain(m, ratio, iters, min_keep=1):
    """Kept counts after each round, e.g. ``(38, 22, 13)`` for 64, 0.6, 3."""
    counts = []
    for _ in range(iters):
        m = keep_count(m, ratio, min_keep)
        counts.append(m)
    return tuple(counts)

