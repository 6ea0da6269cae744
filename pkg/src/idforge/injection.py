"""Mask-guided re-denoising.

A cached template trajectory is replayed from timestep ``t'``; at every
step each character region is re-denoised by its own identity denoiser
and pasted over the cached latent, while character masks grow by a
progressively larger dilation. Masks are boolean 2-D arrays at image
resolution; latents are ``scale`` times smaller.
"""

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy import ndimage

from .diffusion import denoise_step
from .errors import ConfigError, DimensionError, LayoutError

DEFAULT_T_PRIME = 40
DEFAULT_K_MAX = 50
DEFAULT_SCALE = 8


def _mask(m, name="mask"):
    arr = np.asarray(m)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be a square 2-D array, got {arr.shape}")
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise ConfigError(f"{name} must be binary")
        arr = arr.astype(bool)
    return arr


def exclusive(masks):
    """Make masks pairwise disjoint; earlier masks win contested pixels."""
    taken = None
    out = []
    for m in masks:
        m = _mask(m)
        if taken is None:
            taken = np.zeros_like(m)
        out.append(m & ~taken)
        taken = taken | m
    return out


@dataclass(frozen=True)
class MaskSet:
    characters: tuple
    background: np.ndarray

    @property
    def side(self):
        return self.background.shape[0]

    @property
    def s(self):
        return len(self.characters)

    @classmethod
    def from_characters(cls, masks, side=None):
        """Disjoint character masks (first wins) plus their complement."""
        masks = exclusive(masks)
        if masks:
            side = masks[0].shape[0]
            if any(m.shape != masks[0].shape for m in masks):
                raise DimensionError("character masks differ in size")
        elif side is None:
            raise ConfigError("side is required when there are no characters")
        union = np.zeros((side, side), dtype=bool)
        for m in masks:
            union |= m
        return cls(tuple(masks), ~union)

    def is_partition(self):
        total = self.background.astype(np.int64)
        for m in self.characters:
            total = total + m
        return bool(np.all(total == 1))


class Segmenter(Protocol):
    def __call__(self, image):
        """Candidate character regions, most salient first."""


def threshold_segmenter(image):
    """Regions at or above ``mean + 0.5 * std``, split into 4-connected
    components, largest first (ties by label order)."""
    image = np.asarray(image, dtype=np.float64)
    fg = image >= image.mean() + 0.5 * image.std()
    labels, n = ndimage.label(fg)  # default structure is 4-connectivity
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    order = np.argsort(-areas, kind="stable")
    return [labels == (k + 1) for k in order]


def _centroid_x(mask):
    ys, xs = np.nonzero(mask)
    return (xs.mean(), ys.mean())


def extract_masks(template, num_characters, segmenter=threshold_segmenter):
    """Character masks from a template image.

    The first ``num_characters`` segmenter regions are assigned to
    characters left to right by centroid; the background is the
    complement of their union.
    """
    template = np.asarray(template, dtype=np.float64)
    if num_characters < 0:
        raise ConfigError("num_characters must be >= 0")
    side = template.shape[0]
    if num_characters == 0:
        return MaskSet.from_characters([], side=side)
    regions = list(segmenter(template))
    if len(regions) < num_characters:
        raise LayoutError(
            f"found {len(regions)} character regions, need {num_characters} "
            f"(short by {num_characters - len(regions)})"
        )
    chosen = sorted(regions[:num_characters], key=_centroid_x)
    return MaskSet.from_characters(chosen)


def _dilate_axis(mask, radius, axis):
    counts = np.cumsum(mask.astype(np.int64), axis=axis)
    n = mask.shape[axis]
    hi = np.minimum(np.arange(n) + radius, n - 1)
    lo = np.arange(n) - radius - 1
    upper = np.take(counts, hi, axis=axis)
    lower = np.where(
        np.expand_dims(lo >= 0, 1 - axis),
        np.take(counts, np.maximum(lo, 0), axis=axis),
        0,
    )
    return (upper - lower) > 0


def dilate(mask, kernel):
    """Binary dilation with a square element of side ``2 * (kernel // 2) + 1``.

    Pixels outside the grid count as background.
    """
    mask = _mask(mask)
    if kernel < 0:
        raise ConfigError("kernel must be >= 0")
    radius = int(kernel) // 2
    if radius == 0:
        return mask.copy()
    return _dilate_axis(_dilate_axis(mask, radius, 0), radius, 1)


def kernel_schedule(i, t_prime, k_max):
    """Dilation kernel at re-denoising timestep ``i``: 0 at ``t'``, growing
    linearly to ``k_max`` at timestep 0, rounded half up."""
    if t_prime == 0:
        if i != 0:
            raise ConfigError("with t' = 0 only timestep 0 exists")
        return int(k_max)
    if not (0 <= i <= t_prime):
        raise ConfigError(f"timestep {i} outside [0, {t_prime}]")
    return int(np.floor((t_prime - i) / t_prime * k_max + 0.5))


def downsample_mask(mask, latent_side):
    """Block-majority downsampling: a latent cell is set when at least half
    of its block is set."""
    mask = _mask(mask)
    side = mask.shape[0]
    if latent_side < 1 or side % latent_side:
        raise DimensionError(f"mask side {side} is not a multiple of {latent_side}")
    b = side // latent_side
    blocks = mask.reshape(latent_side, b, latent_side, b).sum(axis=(1, 3))
    return 2 * blocks >= b * b


def latent_maskset(maskset, latent_side):
    """Masks at latent resolution that partition the grid exactly.

    Characters are downsampled by block majority with first-character
    priority; the background is the complement of their union.
    """
    chars = [downsample_mask(m, latent_side) for m in maskset.characters]
    return MaskSet.from_characters(chars, side=latent_side)


def compose(z_cached_prev, per_char, maskset_latent):
    """Background cells from the cached latent, character cells from their
    own re-denoised latent."""
    z = np.asarray(z_cached_prev, dtype=np.float64)
    if len(per_char) != maskset_latent.s:
        raise DimensionError(f"{len(per_char)} latents for {maskset_latent.s} masks")
    if z.shape != maskset_latent.background.shape:
        raise DimensionError(f"latent {z.shape} vs masks {maskset_latent.background.shape}")
    if not maskset_latent.is_partition():
        raise LayoutError("latent masks do not partition the grid")
    out = z.copy()
    for grid, m in zip(per_char, maskset_latent.characters):
        grid = np.asarray(grid, dtype=np.float64)
        if grid.shape != z.shape:
            raise DimensionError(f"character latent {grid.shape} vs {z.shape}")
        out[m] = grid[m]
    return out


@dataclass(frozen=True)
class InjectionConfig:
    start_t_prime: int = DEFAULT_T_PRIME
    k_max: int = DEFAULT_K_MAX
    # True: identity denoisers read the cached latent instead of the composite
    denoise_cached: bool = False

    def __post_init__(self):
        if self.start_t_prime < 0:
            raise ConfigError("start_t_prime must be >= 0")
        if self.k_max < 0:
            raise ConfigError("k_max must be >= 0")


@dataclass(frozen=True)
class CharacterIdentity:
    embedding: Optional[np.ndarray]
    denoiser: object
    description: str = ""


def _as_identity(item):
    if isinstance(item, CharacterIdentity):
        return item
    return CharacterIdentity(*item)


def step_masks(maskset, kernel, latent_side, cache=None):
    """Full-resolution masks dilated by ``kernel`` and made disjoint, and the
    matching latent partition."""
    if cache is not None and kernel in cache:
        return cache[kernel]
    grown = MaskSet.from_characters(
        [dilate(m, kernel) for m in maskset.characters], side=maskset.side
    )
    result = (grown, latent_maskset(grown, latent_side))
    if cache is not None:
        cache[kernel] = result
    return result


def redenoise(trajectory, maskset, identities, cfg, schedule, diagnostics=None):
    """Re-denoise ``trajectory`` from timestep ``cfg.start_t_prime`` to 0.

    ``identities[j]`` (an ``(embedding, denoiser[, description])`` tuple or
    :class:`CharacterIdentity`) drives the region of ``maskset.characters[j]``.
    If ``diagnostics`` is a list, one dict per step is appended.
    """
    identities = [_as_identity(x) for x in identities]
    if len(identities) != maskset.s:
        raise LayoutError(f"{len(identities)} identities for {maskset.s} character masks")
    t_prime = cfg.start_t_prime
    if t_prime > trajectory.t:
        raise ConfigError(f"t'={t_prime} exceeds trajectory length {trajectory.t}")
    if trajectory.t != schedule.t:
        raise ConfigError("trajectory and schedule disagree on the number of steps")
    latent_side = trajectory.final.shape[0]
    z = np.array(trajectory.at(t_prime), dtype=np.float64)
    cache = {}
    for i in range(t_prime, 0, -1):
        kernel = kernel_schedule(i, t_prime, cfg.k_max)
        _, latent = step_masks(maskset, kernel, latent_side, cache)
        source = trajectory.at(i) if cfg.denoise_cached else z
        per_char = [
            denoise_step(c.denoiser, c.description, c.embedding, source, i, schedule)
            for c in identities
        ]
        previous = z
        z = compose(trajectory.at(i - 1), per_char, latent)
        if diagnostics is not None:
            diagnostics.append(
                {
                    "timestep": i,
                    "kernel": kernel,
                    "character_cells": [int(m.sum()) for m in latent.characters],
                    "background_cells": int(latent.background.sum()),
                    "mean_abs_update": float(np.mean(np.abs(z - previous))),
                }
            )
    return z


def decode(latent, scale=DEFAULT_SCALE):
    """Image-resolution view of a latent (bilinear upsampling)."""
    latent = np.asarray(latent, dtype=np.float64)
    return ndimage.zoom(latent, scale, order=1, mode="nearest", grid_mode=True)


def masked_correlation(x, y, mask):
    """Pearson correlation of ``x`` and ``y`` over the cells of ``mask``."""
    mask = _mask(mask)
    a = np.asarray(x, dtype=np.float64)[mask]
    b = np.asarray(y, dtype=np.float64)[mask]
    if a.size < 2:
        return float("nan")
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / denom) if denom > 0 else float("nan")


def background_deviation(z, cached, background):
    """Mean absolute difference from the cached latent over background cells."""
    background = _mask(background)
    if not background.any():
        return 0.0
    diff = np.abs(np.asarray(z, dtype=np.float64) - np.asarray(cached, dtype=np.float64))
    return float(diff[background].mean())


def boundary_discontinuity(z, mask):
    """Largest absolute jump between 4-adjacent cells on opposite sides of
    the mask boundary (0 when the mask has no boundary)."""
    mask = _mask(mask)
    z = np.asarray(z, dtype=np.float64)
    worst = 0.0
    for axis in (0, 1):
        cross = np.diff(mask.astype(np.int8), axis=axis) != 0
        if cross.any():
            jumps = np.abs(np.diff(z, axis=axis))[cross]
            worst = max(worst, float(jumps.max()))
    return worst
