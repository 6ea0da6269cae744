"""Seeded synthetic data: identity embedding sets, story specs and
identity target patterns.

All randomness goes through ``numpy.random.Generator`` (PCG64) seeded from
explicit integers, so every output is a pure function of its arguments.
"""

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .discovery import EmbeddingMatrix
from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticEmbeddingConfig:
    d: int = 512
    m: int = 64
    sigma_in: float = 0.15
    contamination: float = 0.3
    num_identities: int = 1
    seed: int = 0
    subspace_dim: int = 8
    ambient_sigma: float = 0.01
    num_distractors: int = 12

    def __post_init__(self):
        if not (0.0 <= self.contamination < 1.0):
            raise ConfigError(f"contamination must be in [0, 1), got {self.contamination}")
        if not self.sigma_in > 0:
            raise ConfigError(f"sigma_in must be positive, got {self.sigma_in}")
        if self.d < 1 or self.m < 1 or self.num_identities < 1:
            raise ConfigError("d, m and num_identities must be >= 1")
        if not (1 <= self.subspace_dim <= self.d):
            raise ConfigError(f"subspace_dim must be in [1, d], got {self.subspace_dim}")
        if self.ambient_sigma < 0:
            raise ConfigError("ambient_sigma must be >= 0")
        if self.num_identities + self.num_distractors < 2 and self.contamination > 0:
            raise ConfigError("contamination needs at least one other identity")

    def to_dict(self):
        return asdict(self)


@dataclass
class IdentitySet:
    embeddings: EmbeddingMatrix
    inlier: np.ndarray  # bool per row; True = drawn from this identity
    identity: int


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _identity_space(rng, n, d, subspace_dim):
    centers = _unit(rng.standard_normal((n, d)))
    bases = []
    for c in centers:
        raw = rng.standard_normal((d, subspace_dim))
        raw -= np.outer(c, c @ raw)  # keep variation off the center direction
        q, _ = np.linalg.qr(raw)
        bases.append(q)
    return centers, bases


def _draw(rng, center, basis, count, cfg):
    coeffs = rng.standard_normal((count, basis.shape[1])) * cfg.sigma_in
    ambient = rng.standard_normal((count, cfg.d)) * cfg.ambient_sigma
    return _unit(center + coeffs @ basis.T + ambient)


def generate_embeddings(cfg):
    """One embedding set per identity.

    Inliers are unit-normalized draws around the identity center, varied
    inside a ``subspace_dim``-dimensional identity subspace plus isotropic
    ambient noise. Contaminating rows are drawn the same way around the
    center of some other identity (the other generated identities or a pool
    of ``num_distractors`` extra ones). Row order is shuffled.
    """
    rng = np.random.default_rng(cfg.seed)
    total = cfg.num_identities + cfg.num_distractors
    centers, bases = _identity_space(rng, total, cfg.d, cfg.subspace_dim)
    n_out = int(round(cfg.contamination * cfg.m))
    n_out = min(n_out, cfg.m - 1)
    sets = []
    for ident in range(cfg.num_identities):
        rows = [_draw(rng, centers[ident], bases[ident], cfg.m - n_out, cfg)]
        others = [j for j in range(total) if j != ident]
        sources = rng.choice(others, size=n_out) if n_out else np.array([], dtype=int)
        for j in sources:
            rows.append(_draw(rng, centers[j], bases[j], 1, cfg))
        values = np.vstack(rows)
        inlier = np.zeros(cfg.m, dtype=bool)
        inlier[: cfg.m - n_out] = True
        perm = rng.permutation(cfg.m)
        sets.append(
            IdentitySet(EmbeddingMatrix(values[perm]), inlier[perm], ident)
        )
    return sets


def identity_centers(cfg):
    """The identity centers ``generate_embeddings`` uses for ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    centers, _ = _identity_space(
        rng, cfg.num_identities + cfg.num_distractors, cfg.d, cfg.subspace_dim
    )
    return centers[: cfg.num_identities]


def embedding_seed(vector, digits=12):
    """Stable 63-bit seed from an embedding, insensitive to rounding noise
    below ``digits`` significant digits."""
    text = ",".join(f"{x:.{digits}e}" for x in np.asarray(vector, dtype=np.float64))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1
