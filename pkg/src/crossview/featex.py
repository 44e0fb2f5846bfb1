"""Feature volumes and a deterministic hand-crafted extractor.

A feature volume is an H x W x C array whose columns index azimuth. The
extractor here replaces a learned backbone with per-cell image statistics;
it keeps the contract the rest of the pipeline relies on: circularly
shifting the input image by a whole number of cell widths circularly
shifts the output columns by the same number of cells, exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, DimensionError

MODES = ("block-mean", "gradient-orientation-histogram")

# Volumes below this Frobenius norm carry no direction and cannot be normalized.
MIN_NORM = 1e-12


@dataclass
class FeatureVolume:
    """H x W x C real-valued descriptor, columns indexing azimuth.

    ``normalized`` marks volumes whose Frobenius norm is 1. Data is stored
    as float32 (stores) or float64 (training paths) and treated as
    immutable after construction.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        arr = np.ascontiguousarray(arr)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DimensionError(f"feature volume must be H x W x C, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DegenerateInputError("feature volume contains non-finite values")
        arr.setflags(write=False)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ExtractorConfig:
    """Output grid and channel budget of the hand-crafted extractor."""

    height: int = 4
    width: int = 64
    channels: int = 16
    mode: str = "block-mean"

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ConfigurationError("extractor dims must all be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown extractor mode {self.mode!r}; expected one of {MODES}")


def l2_normalize(v: FeatureVolume) -> FeatureVolume:
    """Scale a volume to unit Frobenius norm.

    Raises DegenerateInputError when the norm is below ``MIN_NORM``.
    """
    norm = float(np.linalg.norm(v.data.astype(np.float64)))
    if norm < MIN_NORM:
        raise DegenerateInputError(f"cannot normalize a volume with norm {norm:.3e}")
    return FeatureVolume(data=(v.data / norm).astype(v.data.dtype), normalized=True)


def crop_columns(v: FeatureVolume, start: int, width: int) -> FeatureVolume:
    """Take ``width`` consecutive columns starting at ``start``, wrapping.

    The result is no longer flagged normalized.
    """
    if width < 1 or width > v.width:
        raise DimensionError(f"crop width {width} out of range 1..{v.width}")
    cols = (start + np.arange(width)) % v.width
    return FeatureVolume(data=np.ascontiguousarray(v.data[:, cols, :]), normalized=False)


def _luminance(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return img.mean(axis=2)


def _cell_means(values: np.ndarray, row_edges, col_edges) -> np.ndarray:
    # Segment sums via reduceat, then divide by the per-cell pixel counts.
    sums = np.add.reduceat(values, row_edges[:-1], axis=0)
    sums = np.add.reduceat(sums, col_edges[:-1], axis=1)
    counts = np.diff(row_edges)[:, None] * np.diff(col_edges)[None, :]
    return sums / counts


def extract_features(img: np.ndarray, cfg: ExtractorConfig) -> FeatureVolume:
    """Summarize an image into a unit-normalized feature volume.

    The image is partitioned into an ``height x width`` grid of cells.
    In block-mean mode the channels are, in order: per-band mean intensity,
    mean absolute horizontal gradient, mean absolute vertical gradient, and
    orientation-binned mean gradient magnitude filling the remaining
    channels. Gradients wrap circularly so the azimuth-shift contract is
    exact. In gradient-orientation-histogram mode every channel is an
    orientation bin.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise DimensionError(f"expected a 2-D or 3-D image, got shape {img.shape}")
    h_img, w_img = img.shape[:2]
    if h_img < cfg.height or w_img < cfg.width:
        raise DimensionError(
            f"image {h_img}x{w_img} smaller than the {cfg.height}x{cfg.width} cell grid"
        )

    row_edges = [i * h_img // cfg.height for i in range(cfg.height + 1)]
    col_edges = [j * w_img // cfg.width for j in range(cfg.width + 1)]

    lum = _luminance(img)
    # Backward differences with wrap-around; circular in both axes so that
    # whole-cell column shifts commute with every statistic below.
    gx = lum - np.roll(lum, 1, axis=1)
    gy = lum - np.roll(lum, 1, axis=0)
    mag = np.hypot(gx, gy)

    planes = []
    if cfg.mode == "block-mean":
        bands = [img] if img.ndim == 2 else [img[:, :, k] for k in range(img.shape[2])]
        for band in bands:
            planes.append(_cell_means(band, row_edges, col_edges))
        planes.append(_cell_means(np.abs(gx), row_edges, col_edges))
        planes.append(_cell_means(np.abs(gy), row_edges, col_edges))
        n_orient = cfg.channels - len(planes)
    else:
        n_orient = cfg.channels

    if n_orient > 0:
        theta = np.arctan2(gy, gx)
        bins = np.floor((theta + np.pi) / (2.0 * np.pi) * n_orient).astype(np.intp)
        bins = np.clip(bins, 0, n_orient - 1)
        for b in range(n_orient):
            planes.append(_cell_means(np.where(bins == b, mag, 0.0), row_edges, col_edges))

    raw = np.stack(planes[: cfg.channels], axis=2).astype(np.float32)
    return l2_normalize(FeatureVolume(data=raw))
