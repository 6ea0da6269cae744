"""End-to-end toy story simulation.

Per character: synthesize an embedding set, run identity discovery and
turn the discovered embedding into an identity target pattern. Per prompt:
sample a template trajectory toward the prompt's procedural latent, segment
character layouts from the decoded template and re-denoise with one
identity denoiser per character.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import injection
from .diffusion import (
    GaussianDenoiser,
    band_limited_noise,
    character_tokens,
    make_schedule,
    oracle_denoiser,
    prompt_to_target,
    sample_with_cache,
)
from .discovery import DiscoveryConfig, discover_identity
from .errors import ConfigError
from .injection import CharacterIdentity, InjectionConfig
from .synthetic import SyntheticEmbeddingConfig, embedding_seed, generate_embeddings


def derive_seed(*parts):
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


@dataclass(frozen=True)
class StorySpec:
    characters: tuple
    prompts: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "characters", tuple(self.characters))
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if len(self.prompts) < 1:
            raise ConfigError("a story needs at least one prompt")
        for p in self.prompts:
            for idx in character_tokens(p):
                if idx >= len(self.characters):
                    raise ConfigError(f"prompt {p!r} references unknown character [{idx}]")

    def to_dict(self):
        return {
            "characters": list(self.characters),
            "prompts": list(self.prompts),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SimulationConfig:
    latent_side: int = 32
    scale: int = injection.DEFAULT_SCALE
    t: int = 50
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    injection: InjectionConfig = field(default_factory=InjectionConfig)
    embeddings: SyntheticEmbeddingConfig = field(default_factory=SyntheticEmbeddingConfig)
    # identity generator's data model: N(target, spread^2 P); spread 0 = oracle
    identity_spread: float = 0.5
    identity_correlation_length: float = 3.0

    def __post_init__(self):
        if self.latent_side < 4:
            raise ConfigError("latent_side must be >= 4")
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")


def face_pattern(seed, side, cy, cx, radius):
    """Identity-specific face-like pattern centred on a silhouette of the
    given ``radius``; returns ``(values, support)``.

    The head ellipse is 1.2-1.4 times the silhouette, so it spills past a
    tight mask. Eyes and mouth stay within half the silhouette radius. Head
    size, tone, eye spacing and size, mouth width and a faint texture are
    drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    head = radius * rng.uniform(1.2, 1.4)
    tone = rng.uniform(0.45, 0.9)
    eye_dx = rng.uniform(0.2, 0.35) * radius
    eye_dy = rng.uniform(0.1, 0.25) * radius
    eye_r = rng.uniform(0.1, 0.15) * radius + 0.5
    mouth_w = rng.uniform(0.15, 0.3) * radius
    mouth_y = rng.uniform(0.2, 0.35) * radius
    texture = rng.standard_normal((side, side)) * 0.05
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    dy = yy - cy
    dx = xx - cx
    support = (dy / (1.1 * head)) ** 2 + (dx / head) ** 2 <= 1.0
    face = tone + texture
    for sx in (-1.0, 1.0):
        eye = (dy + eye_dy) ** 2 + (dx - sx * eye_dx) ** 2 <= eye_r**2
        face = np.where(eye, -0.6, face)
    mouth = (np.abs(dy - mouth_y) <= 0.5) & (np.abs(dx) <= mouth_w)
    face = np.where(mouth, -0.3, face)
    return np.where(support, np.clip(face, -1.0, 1.0), 0.0), support


def identity_target(identity_seed, background_seed, region):
    """Clean latent the identity generator aims for: its own background with
    the identity's face fitted to ``region`` (a latent-resolution mask)."""
    side = region.shape[0]
    rng = np.random.default_rng(background_seed)
    grid = band_limited_noise(rng, side)
    if not region.any():
        return grid
    ys, xs = np.nonzero(region)
    cy, cx = ys.mean() + 0.5, xs.mean() + 0.5
    radius = max(1.5, np.sqrt(region.sum() / np.pi))
    face, support = face_pattern(identity_seed, side, cy, cx, radius)
    return np.where(support, face, grid)


@dataclass
class CharacterResult:
    description: str
    embedding: np.ndarray
    identity_seed: int
    retained: int


@dataclass
class PromptResult:
    prompt: str
    trajectory: object
    masks: injection.MaskSet  # image resolution
    latent_masks: injection.MaskSet
    targets: list  # identity target per mask, left to right
    characters: list  # character index per mask
    output: np.ndarray
    diagnostics: list

    @property
    def template(self):
        return self.trajectory.final


@dataclass
class PreparedPrompt:
    prompt: str
    trajectory: object
    masks: injection.MaskSet
    latent_masks: injection.MaskSet
    characters: list


def discover_characters(spec, cfg):
    out = []
    for j, desc in enumerate(spec.characters):
        ecfg = replace(cfg.embeddings, seed=derive_seed(spec.seed, "character", j, desc), num_identities=1)
        sample = generate_embeddings(ecfg)[0]
        report = discover_identity(sample.embeddings, cfg.discovery)
        out.append(
            CharacterResult(desc, report.final_embedding, embedding_seed(report.final_embedding), report.retained)
        )
    return out


def prepare_prompt(spec, index, cfg, schedule):
    """Template trajectory, layouts and identity targets for one prompt."""
    prompt = spec.prompts[index]
    side = cfg.latent_side
    target = prompt_to_target(prompt, side, spec.seed)
    trajectory = sample_with_cache(
        oracle_denoiser(target, schedule), prompt, None,
        derive_seed(spec.seed, "prompt", index), schedule, side,
    )
    tokens = character_tokens(prompt)
    image = injection.decode(trajectory.final, cfg.scale)
    masks = injection.extract_masks(image, len(tokens))
    latent_masks = injection.latent_maskset(masks, side)
    return PreparedPrompt(prompt, trajectory, masks, latent_masks, tokens)


def run_prompt(prepared, chars, cfg, schedule, spec_seed, index, inj=None, diagnostics=None):
    inj = inj or cfg.injection
    targets = []
    identities = []
    for slot, (ch, region) in enumerate(zip(prepared.characters, prepared.latent_masks.characters)):
        info = chars[ch]
        target = identity_target(info.identity_seed, derive_seed(spec_seed, "idbg", index, slot), region)
        targets.append(target)
        den = GaussianDenoiser(target, schedule, cfg.identity_spread, cfg.identity_correlation_length)
        identities.append(CharacterIdentity(info.embedding, den, info.description))
    diag = [] if diagnostics is None else diagnostics
    out = injection.redenoise(prepared.trajectory, prepared.masks, identities, inj, schedule, diag)
    return out, targets, diag


def simulate_story(spec, cfg=None):
    cfg = cfg or SimulationConfig()
    schedule = make_schedule(t=cfg.t)
    chars = discover_characters(spec, cfg)
    results = []
    for index in range(len(spec.prompts)):
        prep = prepare_prompt(spec, index, cfg, schedule)
        out, targets, diag = run_prompt(prep, chars, cfg, schedule, spec.seed, index)
        results.append(
            PromptResult(prep.prompt, prep.trajectory, prep.masks, prep.latent_masks, targets, prep.characters, out, diag)
        )
    return chars, results


def prompt_metrics(output, cached, latent_masks, targets):
    """Identity correlation (mean over characters), background deviation
    from the cached sample and the seam proxy (largest jump across any
    original character boundary)."""
    corr = [
        injection.masked_correlation(output, tgt, m)
        for tgt, m in zip(targets, latent_masks.characters)
    ]
    seam = max(
        (injection.boundary_discontinuity(output, m) for m in latent_masks.characters),
        default=0.0,
    )
    return {
        "identity_correlation": float(np.nanmean(corr)) if corr else float("nan"),
        "background_deviation": injection.background_deviation(output, cached, latent_masks.background),
        "boundary_discontinuity": seam,
    }


def sweep(spec, cfg, t_primes=(10, 20, 30, 40, 50), k_maxes=None):
    """Re-run injection for each ``t'`` (and optionally each ``k_max``) on
    shared templates; one metrics row per (prompt, t', k_max)."""
    schedule = make_schedule(t=cfg.t)
    chars = discover_characters(spec, cfg)
    k_maxes = k_maxes or (cfg.injection.k_max,)
    rows = []
    for index in range(len(spec.prompts)):
        prep = prepare_prompt(spec, index, cfg, schedule)
        for k_max in k_maxes:
            for tp in t_primes:
                inj = replace(cfg.injection, start_t_prime=tp, k_max=k_max)
                out, targets, _ = run_prompt(prep, chars, cfg, schedule, spec.seed, index, inj)
                row = {"seed": spec.seed, "prompt": index, "t_prime": tp, "k_max": k_max}
                row.update(prompt_metrics(out, prep.trajectory.final, prep.latent_masks, targets))
                rows.append(row)
    return rows


_PEOPLE = [
    "a young woman with curly red hair",
    "an old man with a grey beard",
    "a teenage boy in a hoodie",
    "a middle-aged woman wearing glasses",
    "a tall man in a suit",
    "a girl with braided hair",
]
_SCENES = [
    "walks through a rainy street",
    "reads a book in the library",
    "cooks dinner in a small kitchen",
    "rides a bicycle along the beach",
    "plays chess in the park",
    "waits at a train station",
    "paints a canvas in a studio",
    "hikes up a snowy mountain",
]


def random_story(seed, n_prompts=10, n_characters=2):
    """Seeded story whose prompts mention one or more characters."""
    rng = np.random.default_rng(seed)
    people = [_PEOPLE[i] for i in rng.choice(len(_PEOPLE), size=n_characters, replace=False)]
    prompts = []
    for k in range(n_prompts):
        scene = _SCENES[int(rng.integers(len(_SCENES)))]
        if n_characters == 0:
            prompts.append(f"an empty place where someone {scene}")
        elif n_characters == 1 or k % 2 == 0:
            prompts.append(f"[{k % n_characters}] {scene}")
        else:
            prompts.append(f"[0] and [1] together, one {scene}")
    return StorySpec(people, prompts, seed)
