"""Polar warp from overhead (aerial) images into the ground-view azimuth frame.

An aerial tile is resampled along radial lines so that concentric circles
become horizontal rows and azimuth runs left to right: column 0 points
north (up in the aerial image) and the angle grows clockwise. The top
output row holds the outermost circle, the bottom row the innermost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class PolarConfig:
    """Geometry of the warp: square aerial side and target grid size.

    Attributes:
        aerial_size: side length of the square aerial image, pixels.
        target_height: output rows (radial samples).
        target_width: output columns (azimuth samples).
    """

    aerial_size: int
    target_height: int
    target_width: int

    def __post_init__(self):
        if self.aerial_size < 2:
            raise ConfigurationError(f"aerial_size must be >= 2, got {self.aerial_size}")
        if self.target_height < 1 or self.target_width < 1:
            raise ConfigurationError(
                f"target size must be >= 1x1, got {self.target_height}x{self.target_width}"
            )


@dataclass(frozen=True)
class SamplingGrid:
    """Source coordinates for every target pixel.

    ``src_x[i, j]`` / ``src_y[i, j]`` are the real-valued aerial (row, col)
    coordinates sampled for target pixel (row i, col j).
    """

    src_x: np.ndarray
    src_y: np.ndarray


def source_coords(cfg: PolarConfig, xt, yt):
    """Map target coordinates (row ``xt``, col ``yt``) to aerial coordinates.

    Accepts scalars or arrays; everything is evaluated in float64. A target
    row of ``target_height`` lands exactly on the image center (radius 0),
    row 0 on the outermost circle of radius ``aerial_size / 2``.
    """
    xt = np.asarray(xt, dtype=np.float64)
    yt = np.asarray(yt, dtype=np.float64)
    half = cfg.aerial_size / 2.0
    radius = half * (cfg.target_height - xt) / cfg.target_height
    angle = 2.0 * np.pi * yt / cfg.target_width
    src_x = half - radius * np.cos(angle)
    src_y = half + radius * np.sin(angle)
    return src_x, src_y


def polar_grid(cfg: PolarConfig) -> SamplingGrid:
    """Build the full sampling grid for a config.

    Returns a grid of shape (target_height, target_width) per coordinate.
    """
    xt = np.arange(cfg.target_height, dtype=np.float64)[:, None]
    yt = np.arange(cfg.target_width, dtype=np.float64)[None, :]
    src_x, src_y = source_coords(cfg, xt, yt)
    return SamplingGrid(src_x=src_x, src_y=src_y)


def bilinear_sample(img: np.ndarray, x, y):
    """Sample ``img`` at real-valued (row ``x``, col ``y``) coordinates.

    Interpolates bilinearly between the four surrounding pixels.
    Coordinates outside the image are clamped to the border first, so the
    function is total over finite inputs. Works on H x W and H x W x C
    arrays and on scalar or array coordinates; returns float64 values.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise DimensionError("cannot sample an empty image")
    data = img.astype(np.float64)
    h, w = data.shape[:2]

    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, h - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, w - 1.0)

    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, h - 1)
    y1 = np.minimum(y0 + 1, w - 1)
    fx = x - x0
    fy = y - y0
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    top = data[x0, y0] * (1.0 - fy) + data[x0, y1] * fy
    bot = data[x1, y0] * (1.0 - fy) + data[x1, y1] * fy
    return top * (1.0 - fx) + bot * fx


def polar_transform(aerial: np.ndarray, cfg: PolarConfig) -> np.ndarray:
    """Warp a square aerial image onto the (radius, azimuth) target grid.

    The output has shape (target_height, target_width[, channels]) and the
    input dtype: integer images are rounded back to their original type,
    float images come back as float64. Deterministic for identical inputs.
    """
    aerial = np.asarray(aerial)
    if aerial.shape[0] != cfg.aerial_size or aerial.shape[1] != cfg.aerial_size:
        raise DimensionError(
            f"aerial image is {aerial.shape[0]}x{aerial.shape[1]}, "
            f"config expects {cfg.aerial_size}x{cfg.aerial_size}"
        )
    grid = polar_grid(cfg)
    out = bilinear_sample(aerial, grid.src_x, grid.src_y)
    if np.issubdtype(aerial.dtype, np.integer):
        info = np.iinfo(aerial.dtype)
        out = np.clip(np.rint(out), info.min, info.max).astype(aerial.dtype)
    return out
