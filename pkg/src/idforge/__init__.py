"""Consistent-character toolkit: SVD-based identity discovery from noisy
embedding sets, outlier-filtering baselines and a toy latent-diffusion
simulator for mask-guided identity injection."""

__version__ = "0.1.0"

from .discovery import (
    DiscoveryConfig,
    EmbeddingMatrix,
    FilterReport,
    discover_identity,
    naive_average,
    reconstruction_errors,
    reconstruction_matrix,
)
from .errors import ConfigError, DimensionError, IdforgeError, LayoutError, NumericalError, ParseError
from .injection import InjectionConfig, MaskSet, extract_masks, kernel_schedule, redenoise
from .linalg import thin_svd
from .story import SimulationConfig, StorySpec, simulate_story, sweep

__all__ = [
    "ConfigError", "DimensionError", "DiscoveryConfig", "EmbeddingMatrix", "FilterReport",
    "IdforgeError", "InjectionConfig", "LayoutError", "MaskSet", "NumericalError", "ParseError",
    "SimulationConfig", "StorySpec", "discover_identity", "extract_masks", "kernel_schedule",
    "naive_average", "reconstruction_errors", "reconstruction_matrix", "redenoise",
    "simulate_story", "sweep", "thin_svd",
]
