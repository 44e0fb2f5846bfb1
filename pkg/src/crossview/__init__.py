"""Joint location and orientation estimation by cross-view matching.

Pipeline: warp aerial tiles into the ground-view azimuth frame
(:mod:`crossview.geometry`), summarize both views as feature volumes
(:mod:`crossview.featex`), correlate over azimuth shifts to estimate
orientation and distance (:mod:`crossview.dsm`), retrieve and score
against a database (:mod:`crossview.retrieval`), and train a toy
embedder with the soft-margin triplet objective (:mod:`crossview.loss`).
"""

from .dsm import (
    CorrelationProfile,
    FlopModel,
    FourierCache,
    MatchResult,
    OrientationEstimate,
    correlate_spatial,
    correlate_spectral,
    estimate_orientation,
    flop_model,
    fourier_cache,
    match_limited_fov,
    match_panorama,
)
from .featex import ExtractorConfig, FeatureVolume, crop_columns, extract_features, l2_normalize
from .geometry import PolarConfig, SamplingGrid, bilinear_sample, polar_grid, polar_transform

__all__ = [
    "CorrelationProfile",
    "ExtractorConfig",
    "FeatureVolume",
    "FlopModel",
    "FourierCache",
    "MatchResult",
    "OrientationEstimate",
    "PolarConfig",
    "SamplingGrid",
    "bilinear_sample",
    "correlate_spatial",
    "correlate_spectral",
    "crop_columns",
    "estimate_orientation",
    "extract_features",
    "flop_model",
    "fourier_cache",
    "l2_normalize",
    "match_limited_fov",
    "match_panorama",
    "polar_grid",
    "polar_transform",
]

__version__ = "0.1.0"
