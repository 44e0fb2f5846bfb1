"""Dynamic similarity matching over azimuth shifts.

The ground volume slides circularly along the aerial volume's azimuth
axis; the inner product at every shift forms a correlation profile whose
argmax is the relative orientation. For full panoramas the peak converts
directly to an L2 distance between unit volumes; for narrower views the
aerial volume is cropped at the peak, renormalized, and compared.

Both a direct (spatial) path and an FFT (spectral) path are provided; the
spectral path supports precomputed aerial Fourier coefficients so a
database can be correlated against at coefficient-multiplication cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheError, ConfigurationError, DimensionError
from .featex import FeatureVolume, crop_columns, l2_normalize

# Scores within this distance of the profile maximum count as tied.
TIE_TOLERANCE = 1e-6

PATHS = ("spatial", "spectral")
TIE_POLICIES = ("first", "random")


@dataclass(frozen=True)
class CorrelationProfile:
    """Similarity score per azimuth shift; length equals the aerial width."""

    scores: np.ndarray

    @property
    def width(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class OrientationEstimate:
    """Chosen shift, its compass bearing, the profile peak, and tie count."""

    shift: int
    azimuth_deg: float
    peak_score: float
    tie_count: int


@dataclass(frozen=True)
class MatchResult:
    """Distance between a ground/aerial pair plus the orientation estimate."""

    distance: float
    orientation: OrientationEstimate


@dataclass(frozen=True)
class FourierCache:
    """Precomputed azimuth-axis rfft coefficients of an aerial volume.

    ``coeffs`` has shape (H, W_a // 2 + 1, C); ``width`` restores the
    signal length on the inverse transform.
    """

    coeffs: np.ndarray
    width: int


def _check_pair(f_a: FeatureVolume, f_g: FeatureVolume):
    if f_a.height != f_g.height or f_a.channels != f_g.channels:
        raise DimensionError(
            f"height/channel mismatch: aerial {f_a.height}x{f_a.channels}, "
            f"ground {f_g.height}x{f_g.channels}"
        )
    if f_g.width > f_a.width:
        raise DimensionError(
            f"ground width {f_g.width} exceeds aerial width {f_a.width}"
        )


def correlate_spatial(f_a: FeatureVolume, f_g: FeatureVolume) -> CorrelationProfile:
    """Direct evaluation of the circular sliding inner product.

    scores[i] = sum over (h, w, c) of aerial(h, (i + w) mod W_a, c) *
    ground(h, w, c), accumulated in float64.
    """
    _check_pair(f_a, f_g)
    a = f_a.data.astype(np.float64)
    g = f_g.data.astype(np.float64)
    w_a, w_g = f_a.width, f_g.width
    doubled = np.concatenate([a, a], axis=1)
    windows = sliding_window_view(doubled, w_g, axis=1)[:, :w_a]
    scores = np.einsum("hicw,hwc->i", windows, g)
    return CorrelationProfile(scores=scores)


def fourier_cache(f_a: FeatureVolume) -> FourierCache:
    """Precompute the aerial volume's azimuth-axis Fourier coefficients."""
    coeffs = np.fft.rfft(f_a.data.astype(np.float64), axis=1)
    return FourierCache(coeffs=coeffs, width=f_a.width)


def ground_spectrum(f_g: FeatureVolume, aerial_width: int) -> np.ndarray:
    """Conjugated coefficients of the ground volume, zero-padded to W_a.

    Reusable across every database entry of a query.
    """
    if f_g.width > aerial_width:
        raise DimensionError(
            f"ground width {f_g.width} exceeds aerial width {aerial_width}"
        )
    padded = np.zeros((f_g.height, aerial_width, f_g.channels), dtype=np.float64)
    padded[:, : f_g.width] = f_g.data
    return np.conj(np.fft.rfft(padded, axis=1))


def correlate_spectral(
    f_a: FeatureVolume,
    f_g: FeatureVolume,
    cache: FourierCache | None = None,
    g_spec: np.ndarray | None = None,
) -> CorrelationProfile:
    """FFT evaluation of the same profile as :func:`correlate_spatial`.

    The ground volume is zero-padded along azimuth to the aerial width;
    per (h, c) row the aerial coefficients are multiplied by the
    conjugated ground coefficients, summed over rows and channels, and
    inverse-transformed. ``cache``/``g_spec`` skip the forward transforms.
    """
    _check_pair(f_a, f_g)
    w_a = f_a.width
    n_bins = w_a // 2 + 1
    if cache is not None:
        expected = (f_a.height, n_bins, f_a.channels)
        if cache.coeffs.shape != expected or cache.width != w_a:
            raise CacheError(
                f"cache shape {cache.coeffs.shape} (width {cache.width}) does not "
                f"match volume expecting {expected} (width {w_a})"
            )
        a_coeffs = cache.coeffs
    else:
        a_coeffs = np.fft.rfft(f_a.data.astype(np.float64), axis=1)
    if g_spec is None:
        g_spec = ground_spectrum(f_g, w_a)
    elif g_spec.shape != (f_g.height, n_bins, f_g.channels):
        raise CacheError(f"ground spectrum shape {g_spec.shape} does not match")
    spectrum = np.einsum("hwc,hwc->w", a_coeffs, g_spec)
    scores = np.fft.irfft(spectrum, n=w_a)
    return CorrelationProfile(scores=scores)


def estimate_orientation(
    profile: CorrelationProfile, tie: str = "first", seed: int = 0
) -> OrientationEstimate:
    """Pick the profile argmax; break near-ties per the chosen policy.

    Bins scoring within TIE_TOLERANCE of the maximum form the tie set.
    Policy "first" takes the lowest such bin; "random" draws one with a
    generator seeded by ``seed``, so repeated calls are reproducible.
    """
    scores = np.asarray(profile.scores, dtype=np.float64)
    if scores.size == 0:
        raise DimensionError("empty correlation profile")
    if tie not in TIE_POLICIES:
        raise ConfigurationError(f"unknown tie policy {tie!r}; expected one of {TIE_POLICIES}")
    peak = float(scores.max())
    tied = np.flatnonzero(scores >= peak - TIE_TOLERANCE)
    if tie == "first":
        shift = int(tied[0])
    else:
        shift = int(np.random.default_rng(seed).choice(tied))
    return OrientationEstimate(
        shift=shift,
        azimuth_deg=shift * 360.0 / scores.size,
        peak_score=peak,
        tie_count=int(tied.size),
    )


def _require_normalized(*volumes: FeatureVolume):
    for v in volumes:
        if not v.normalized:
            raise ValueError("matching requires unit-normalized volumes; call l2_normalize first")


def _correlate(f_a, f_g, path, cache, g_spec):
    if path == "spatial":
        return correlate_spatial(f_a, f_g)
    if path == "spectral":
        return correlate_spectral(f_a, f_g, cache=cache, g_spec=g_spec)
    raise ConfigurationError(f"unknown correlation path {path!r}; expected one of {PATHS}")


def match_panorama(
    f_a: FeatureVolume,
    f_g: FeatureVolume,
    path: str = "spatial",
    tie: str = "first",
    seed: int = 0,
    cache: FourierCache | None = None,
    g_spec: np.ndarray | None = None,
) -> MatchResult:
    """Match a full-width ground volume: distance is 2 * (1 - peak score)."""
    if f_g.width != f_a.width:
        raise DimensionError(
            f"panorama match needs equal widths, got aerial {f_a.width} vs ground {f_g.width}"
        )
    _require_normalized(f_a, f_g)
    profile = _correlate(f_a, f_g, path, cache, g_spec)
    est = estimate_orientation(profile, tie=tie, seed=seed)
    distance = max(0.0, 2.0 * (1.0 - est.peak_score))
    return MatchResult(distance=distance, orientation=est)


def match_limited_fov(
    f_a: FeatureVolume,
    f_g: FeatureVolume,
    path: str = "spatial",
    tie: str = "first",
    seed: int = 0,
    cache: FourierCache | None = None,
    g_spec: np.ndarray | None = None,
) -> MatchResult:
    """Match a narrow ground volume against the best-aligned aerial crop.

    The aerial volume is cropped to the ground width at the correlation
    argmax, renormalized, and compared by Frobenius distance.
    """
    if f_g.width >= f_a.width:
        raise DimensionError(
            f"limited-FoV match needs ground width < aerial width, "
            f"got {f_g.width} vs {f_a.width}"
        )
    _require_normalized(f_a, f_g)
    profile = _correlate(f_a, f_g, path, cache, g_spec)
    est = estimate_orientation(profile, tie=tie, seed=seed)
    cropped = l2_normalize(crop_columns(f_a, est.shift, f_g.width))
    diff = f_g.data.astype(np.float64) - cropped.data.astype(np.float64)
    distance = float(np.linalg.norm(diff))
    return MatchResult(distance=distance, orientation=est)


@dataclass(frozen=True)
class FlopModel:
    """Correlation cost of both paths for one query over N database entries."""

    spatial: int
    spectral: int
    ratio: float


def flop_model(n: int, height: int, width: int, channels: int) -> FlopModel:
    """Flop counts: direct correlation needs 2*N*H*W^2*C, the FFT path
    13*N*H*W*C (coefficient multiply plus inverse transform)."""
    if min(n, height, width, channels) < 1:
        raise ConfigurationError("flop model dims must all be positive")
    spatial = 2 * n * height * width * width * channels
    spectral = 13 * n * height * width * channels
    return FlopModel(spatial=spatial, spectral=spectral, ratio=13.0 / (2.0 * width))
