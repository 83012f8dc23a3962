"""Foveated scene understanding maps (F-SUM) and the difficulty score derived from them."""

__version__ = "0.1.0"

from .foveation import FixationPoint, FoveationParams, build_pyramid, foveate  # noqa: E402
from .fsum_map import FSumMap, NormalizationStats, build_fsum, build_raw_map, make_grid, normalize_maps  # noqa: E402
from .scoring import brute_force_oracle, difficulty_from_scores, ripley_k, weighted_k_score  # noqa: E402

__all__ = [
    "FixationPoint",
    "FoveationParams",
    "build_pyramid",
    "foveate",
    "FSumMap",
    "NormalizationStats",
    "build_fsum",
    "build_raw_map",
    "make_grid",
    "normalize_maps",
    "brute_force_oracle",
    "difficulty_from_scores",
    "ripley_k",
    "weighted_k_score",
]
