"""Deterministic DDIM (eta = 0) sampling with full trajectory caching, plus
closed-form denoisers that make sampler behaviour exactly checkable.

Latent grids are square 2-D float64 arrays. Schedule indices run
``0..train_steps`` with ``alpha_bars[0] == 1``; a sampling run visits
``sample_indices`` from the largest down and finishes at index 0.
"""

import hashlib
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .errors import ConfigError, DimensionError

DEFAULT_TRAIN_STEPS = 1000
DEFAULT_SAMPLE_STEPS = 50
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02

CHARACTER_TOKEN = re.compile(r"\[(\d+)\]")


@dataclass(frozen=True)
class Schedule:
    train_steps: int
    betas: np.ndarray  # betas[j - 1] is beta_j, j = 1..train_steps
    alpha_bars: np.ndarray  # length train_steps + 1
    sample_indices: np.ndarray  # strictly increasing, length t

    @property
    def t(self):
        return len(self.sample_indices)

    def level(self, i):
        """Schedule index of sampling timestep ``i`` (0 <= i <= t)."""
        if not (0 <= i <= self.t):
            raise ConfigError(f"timestep {i} outside [0, {self.t}]")
        return 0 if i == 0 else int(self.sample_indices[i - 1])


def make_schedule(
    train_steps=DEFAULT_TRAIN_STEPS,
    t=DEFAULT_SAMPLE_STEPS,
    beta_min=DEFAULT_BETA_MIN,
    beta_max=DEFAULT_BETA_MAX,
):
    """Linear beta schedule with ``t`` evenly spaced sampling indices ending
    at ``train_steps``."""
    if not (1 <= t <= train_steps):
        raise ConfigError(f"need 1 <= t <= train_steps, got t={t}, train_steps={train_steps}")
    if not (0.0 < beta_min < beta_max < 1.0):
        raise ConfigError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")
    betas = np.linspace(beta_min, beta_max, train_steps)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    # (j * train_steps) // t is strictly increasing because t <= train_steps
    indices = np.array([(j * train_steps) // t for j in range(1, t + 1)], dtype=np.int64)
    for arr in (betas, alpha_bars, indices):
        arr.flags.writeable = False
    return Schedule(train_steps, betas, alpha_bars, indices)


class Denoiser(Protocol):
    def predict_noise(self, condition, identity, latent, step):
        """Noise estimate for ``latent`` at schedule index ``step``."""


def _grid(z, name="latent"):
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DimensionError(f"{name} must be a nonempty square grid, got {arr.shape}")
    return arr


def smooth_spectrum(side, correlation_length):
    """Per-frequency prior variance of a stationary field with a Gaussian
    correlation kernel, normalized to unit mean (unit variance per cell)."""
    if correlation_length <= 0:
        return np.ones((side, side))
    fy = np.fft.fftfreq(side)[:, None]
    fx = np.fft.fftfreq(side)[None, :]
    spec = np.exp(-2.0 * np.pi**2 * correlation_length**2 * (fx**2 + fy**2))
    return spec / spec.mean()


@dataclass(frozen=True)
class GaussianDenoiser:
    """Exact posterior-mean denoiser for data ``x0 ~ N(target, spread^2 P)``.

    ``P`` is a stationary (periodic) correlation with Gaussian kernel of
    width ``correlation_length`` cells; 0 means independent cells. Per
    Fourier mode with prior variance ``v``, the clean estimate moves from
    ``target`` toward the data by ``v sqrt(a) / (v a + 1 - a)`` times
    ``z - sqrt(a) target`` (``a = alpha_bars[step]``): at high noise it
    points at ``target``, near the end it keeps what ``z`` already holds.
    ``spread == 0`` predicts ``target`` exactly at every step. Condition and
    identity arguments are ignored.
    """

    target: np.ndarray
    schedule: Schedule
    spread: float = 0.0
    correlation_length: float = 0.0

    def __post_init__(self):
        target = _grid(self.target, "target").copy()
        target.flags.writeable = False
        object.__setattr__(self, "target", target)
        if self.spread < 0 or self.correlation_length < 0:
            raise ConfigError("spread and correlation_length must be >= 0")
        spectrum = smooth_spectrum(target.shape[0], self.correlation_length)
        object.__setattr__(self, "_prior", self.spread**2 * spectrum)

    def clean_estimate(self, latent, step):
        a = float(self.schedule.alpha_bars[step])
        z = _grid(latent)
        if z.shape != self.target.shape:
            raise DimensionError(f"latent {z.shape} vs target {self.target.shape}")
        if self.spread == 0.0:
            return self.target.copy()
        residual = z - np.sqrt(a) * self.target
        v = self._prior
        gain = v * np.sqrt(a) / (v * a + 1.0 - a)
        if self.correlation_length <= 0:
            return self.target + gain * residual
        return self.target + np.real(np.fft.ifft2(gain * np.fft.fft2(residual)))

    def predict_noise(self, condition, identity, latent, step):
        a = float(self.schedule.alpha_bars[step])
        z = _grid(latent)
        if a >= 1.0:
            return np.zeros_like(z)
        x0 = self.clean_estimate(z, step)
        return (z - np.sqrt(a) * x0) / np.sqrt(1.0 - a)


def oracle_denoiser(target, schedule=None):
    """Denoiser whose noise estimate points exactly at ``target``:
    ``(z - sqrt(a) target) / sqrt(1 - a)``."""
    return GaussianDenoiser(target, schedule or make_schedule(), 0.0)


def ddim_step(z, eps_hat, from_index, to_index, schedule):
    """Deterministic DDIM update between two schedule indices."""
    z = _grid(z)
    eps_hat = _grid(eps_hat, "noise estimate")
    if z.shape != eps_hat.shape:
        raise DimensionError(f"latent {z.shape} vs noise {eps_hat.shape}")
    if not (0 <= to_index < from_index <= schedule.train_steps):
        raise ConfigError(f"need 0 <= to < from <= T, got from={from_index}, to={to_index}")
    a_from = schedule.alpha_bars[from_index]
    a_to = schedule.alpha_bars[to_index]
    x0 = (z - np.sqrt(1.0 - a_from) * eps_hat) / np.sqrt(a_from)
    return np.sqrt(a_to) * x0 + np.sqrt(1.0 - a_to) * eps_hat


@dataclass(frozen=True)
class Trajectory:
    """Cached latents ``z_t, ..., z_0``; ``latents[j]`` is timestep ``t - j``."""

    latents: tuple
    seed: int
    condition_tag: str = ""
    identity: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def t(self):
        return len(self.latents) - 1

    def at(self, i):
        """Latent at timestep ``i`` (``at(0)`` is the final sample)."""
        return self.latents[self.t - i]

    @property
    def final(self):
        return self.latents[-1]


def initial_noise(seed, side):
    return np.random.default_rng(seed).standard_normal((side, side))


def denoise_step(denoiser, condition, identity, z, i, schedule):
    """Advance the latent at timestep ``i`` to timestep ``i - 1``."""
    src = schedule.level(i)
    dst = schedule.level(i - 1)
    eps = denoiser.predict_noise(condition, identity, z, src)
    return ddim_step(z, eps, src, dst, schedule)


def sample_with_cache(denoiser, condition, identity, seed, schedule, side):
    """Run the full sampler from seeded Gaussian noise, keeping every latent."""
    z = initial_noise(seed, side)
    latents = [z]
    for i in range(schedule.t, 0, -1):
        z = denoise_step(denoiser, condition, identity, z, i, schedule)
        latents.append(z)
    for arr in latents:
        arr.flags.writeable = False
    return Trajectory(tuple(latents), seed, condition, identity)


def character_tokens(prompt):
    """Distinct character indices referenced as ``[n]``, in order of first use."""
    seen = []
    for match in CHARACTER_TOKEN.finditer(prompt):
        idx = int(match.group(1))
        if idx not in seen:
            seen.append(idx)
    return seen


def _text_seed(text, seed):
    digest = hashlib.sha256(f"{seed}\x00{text}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def band_limited_noise(rng, side, cutoff=0.15, amplitude=0.3):
    """Smooth random field: white noise low-passed in the Fourier domain and
    scaled to peak ``amplitude``."""
    white = rng.standard_normal((side, side))
    fy = np.fft.fftfreq(side)[:, None]
    fx = np.fft.fftfreq(side)[None, :]
    keep = np.hypot(fx, fy) <= cutoff
    field_ = np.real(np.fft.ifft2(np.fft.fft2(white) * keep))
    peak = np.abs(field_).max()
    return field_ * (amplitude / peak) if peak > 0 else field_


def blob_layout(count, side, rng):
    """Centers and radii (in grid cells) for ``count`` disjoint blobs laid out
    left to right."""
    slots = []
    width = side / max(count, 1)
    radius = min(0.3 * width, 0.22 * side)
    for k in range(count):
        cx = (k + 0.5) * width + rng.uniform(-0.08, 0.08) * width
        cy = side * rng.uniform(0.42, 0.58)
        r = radius * rng.uniform(0.85, 1.0)
        slots.append((cy, cx, r))
    return slots


def render_blob(side, cy, cx, r, value=0.9):
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    dist2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (r * r)
    # flat top with a soft one-cell rim
    return value * np.clip(1.5 - dist2, 0.0, 1.0) ** 0.5


def prompt_to_target(prompt, side, seed):
    """Procedural clean latent for a prompt: seeded band-limited background
    plus one bright blob per referenced character, left to right in order of
    first mention. Values lie in [-1, 1]."""
    if side < 1:
        raise ConfigError("side must be >= 1")
    rng = np.random.default_rng(_text_seed(prompt, seed))
    grid = band_limited_noise(rng, side)
    for cy, cx, r in blob_layout(len(character_tokens(prompt)), side, rng):
        blob = render_blob(side, cy, cx, r)
        grid = np.where(blob > 0, np.maximum(grid, blob), grid)
    return np.clip(grid, -1.0, 1.0)
