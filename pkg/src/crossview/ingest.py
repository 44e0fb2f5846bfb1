"""Dataset plumbing: manifests, image IO, query construction, synthetic
scenes, and the binary feature store.

Synthetic scenes give desk-scale ground truth: the ground panorama is by
construction the polar warp of its aerial tile, rolled by a known number
of azimuth columns (and optionally noised), so the matcher's estimates
can be checked exactly.
"""

from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    ConfigurationError,
    DimensionError,
    ManifestError,
    StoreFormatError,
    StoreLengthError,
)
from .featex import FeatureVolume
from .geometry import PolarConfig, polar_transform

STORE_MAGIC = b"DSMF"
STORE_VERSION = 1


@dataclass(frozen=True)
class ManifestRow:
    pair_id: str
    ground: str
    aerial: str
    latlon: tuple | None = None
    azimuth: float | None = None


@dataclass(frozen=True)
class Manifest:
    rows: tuple

    def __len__(self):
        return len(self.rows)


_HEADERS = {
    ("pair_id", "ground", "aerial"): (False, False),
    ("pair_id", "ground", "aerial", "azimuth"): (False, True),
    ("pair_id", "ground", "aerial", "lat", "lon"): (True, False),
    ("pair_id", "ground", "aerial", "lat", "lon", "azimuth"): (True, True),
}


def parse_manifest(path) -> Manifest:
    """Read a pairing manifest CSV.

    Header must be ``pair_id,ground,aerial`` optionally followed by
    ``lat,lon`` and/or ``azimuth``. Whitespace is trimmed. Malformed rows
    raise ManifestError with their line number; duplicate ids and
    out-of-range azimuths raise ConfigurationError.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(cell.strip() for cell in next(reader))
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if header not in _HEADERS:
            raise ManifestError(f"{path}:1: unrecognized header {','.join(header)!r}")
        has_geo, has_azimuth = _HEADERS[header]

        rows = []
        seen = {}
        for line_no, cells in enumerate(reader, start=2):
            if not cells:
                continue
            cells = [cell.strip() for cell in cells]
            if len(cells) != len(header):
                raise ManifestError(
                    f"{path}:{line_no}: expected {len(header)} fields, found {len(cells)}"
                )
            pair_id, ground, aerial = cells[0], cells[1], cells[2]
            if not pair_id or not ground or not aerial:
                raise ManifestError(f"{path}:{line_no}: empty pair_id or path")
            if pair_id in seen:
                raise ConfigurationError(
                    f"{path}: duplicate pair_id {pair_id!r} on lines {seen[pair_id]} and {line_no}"
                )
            seen[pair_id] = line_no

            latlon = None
            azimuth = None
            try:
                if has_geo:
                    latlon = (float(cells[3]), float(cells[4]))
                if has_azimuth:
                    azimuth = float(cells[-1])
            except ValueError as exc:
                raise ManifestError(f"{path}:{line_no}: {exc}") from None
            if azimuth is not None and not (0.0 <= azimuth < 360.0):
                raise ConfigurationError(
                    f"{path}:{line_no}: azimuth {azimuth} outside [0, 360)"
                )
            rows.append(
                ManifestRow(pair_id=pair_id, ground=ground, aerial=aerial, latlon=latlon, azimuth=azimuth)
            )
    return Manifest(rows=tuple(rows))


def write_manifest(rows, path):
    """Write rows back out with the widest header their fields need."""
    has_geo = any(r.latlon is not None for r in rows)
    has_azimuth = any(r.azimuth is not None for r in rows)
    header = ["pair_id", "ground", "aerial"]
    if has_geo:
        header += ["lat", "lon"]
    if has_azimuth:
        header += ["azimuth"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            cells = [r.pair_id, r.ground, r.aerial]
            if has_geo:
                cells += ["" if r.latlon is None else repr(r.latlon[0]),
                          "" if r.latlon is None else repr(r.latlon[1])]
            if has_azimuth:
                cells += ["" if r.azimuth is None else repr(r.azimuth)]
            writer.writerow(cells)


@dataclass(frozen=True)
class QuerySpec:
    """How to disorient and crop a panorama into a query image.

    ``azimuth`` in degrees, or None to draw one uniformly on the column
    grid, deterministically per (seed, pair_id).
    """

    fov: float = 360.0
    azimuth: float | None = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.fov <= 360.0):
            raise ConfigurationError(f"fov must be in (0, 360], got {self.fov}")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_query(pano: np.ndarray, spec: QuerySpec, pair_id="0"):
    """Shift a panorama by an azimuth and keep its leftmost FoV columns.

    Positive azimuth pans the camera clockwise, so panorama content moves
    left. Azimuths snap to the column grid; the snapped value is returned
    as the ground truth. Returns (query_image, applied_azimuth_deg).
    """
    pano = np.asarray(pano)
    w_img = pano.shape[1]
    if spec.azimuth is None:
        rng = np.random.default_rng([spec.seed, zlib.crc32(str(pair_id).encode())])
        shift = int(rng.integers(0, w_img))
    else:
        shift = _round_half_up(spec.azimuth * w_img / 360.0) % w_img
    width = _round_half_up(w_img * spec.fov / 360.0)
    if width < 1:
        raise ConfigurationError(f"fov {spec.fov} deg yields zero columns at width {w_img}")
    out = np.roll(pano, -shift, axis=1)[:, :width]
    return np.ascontiguousarray(out), shift * 360.0 / w_img


@dataclass(frozen=True)
class SynthScene:
    aerial: np.ndarray
    ground: np.ndarray
    gt_azimuth: float


def synth_scene(seed: int, cfg: PolarConfig, noise_sigma: float = 0.0) -> SynthScene:
    """Procedural aerial tile plus its disoriented ground panorama.

    The aerial image mixes smooth random blobs with radial and annular
    strokes (roads), the latter deliberately creating the near-symmetric
    correlation peaks real road scenes show. The ground view is the polar
    warp rolled by a seeded whole-column azimuth, plus optional Gaussian
    pixel noise. Bit-reproducible per (seed, cfg, noise_sigma).
    """
    rng = np.random.default_rng(seed)
    size = cfg.aerial_size
    xs = np.arange(size, dtype=np.float64)[:, None]
    ys = np.arange(size, dtype=np.float64)[None, :]
    cx = size / 2.0
    radius = np.hypot(xs - cx, ys - cx)
    angle = np.arctan2(ys - cx, cx - xs)

    field = np.full((size, size), 90.0)
    for _ in range(int(rng.integers(6, 12))):
        bx, by = rng.uniform(0, size, size=2)
        sigma = rng.uniform(size / 16.0, size / 6.0)
        amp = rng.uniform(25.0, 90.0) * rng.choice([-1.0, 1.0])
        field += amp * np.exp(-((xs - bx) ** 2 + (ys - by) ** 2) / (2.0 * sigma**2))

    for _ in range(int(rng.integers(1, 4))):  # radial roads
        theta = rng.uniform(-np.pi, np.pi)
        half_width = rng.uniform(0.03, 0.08)
        wrapped = np.angle(np.exp(1j * (angle - theta)))
        mask = (np.abs(wrapped) < half_width) & (radius > 2.0)
        field[mask] = rng.uniform(180.0, 240.0)

    for _ in range(int(rng.integers(0, 3))):  # annular roads
        ring = rng.uniform(size / 8.0, size / 2.2)
        thickness = rng.uniform(0.8, 2.0)
        field[np.abs(radius - ring) < thickness] = rng.uniform(170.0, 230.0)

    aerial = np.clip(np.rint(field), 0, 255).astype(np.uint8)
    warped = polar_transform(aerial, cfg)
    shift = int(rng.integers(0, cfg.target_width))
    ground = np.roll(warped, -shift, axis=1).astype(np.float64)
    ground += rng.normal(0.0, noise_sigma, size=ground.shape)
    ground = np.clip(np.rint(ground), 0, 255).astype(np.uint8)
    return SynthScene(
        aerial=aerial,
        ground=ground,
        gt_azimuth=shift * 360.0 / cfg.target_width,
    )


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG as uint8, grayscale (H, W) or color (H, W, 3)."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if "A" in img.mode or img.mode == "P" else "L")
        return np.asarray(img, dtype=np.uint8)


def save_image(arr: np.ndarray, path):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def write_store(records, path):
    """Serialize (id, FeatureVolume) records.

    Layout: magic, version u16, H/W/C u32, count u32, then per record a
    u32 id followed by H*W*C float32 values; all little-endian.
    """
    records = list(records)
    dims = {(v.height, v.width, v.channels) for _, v in records}
    if len(dims) > 1:
        raise DimensionError(f"store requires uniform dims, got {sorted(dims)}")
    height, width, channels = dims.pop() if dims else (0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<HIIII", STORE_VERSION, height, width, channels, len(records)))
        for rec_id, volume in records:
            fh.write(struct.pack("<I", int(rec_id)))
            fh.write(volume.data.astype("<f4").tobytes())


def read_store(path):
    """Load a store written by :func:`write_store`; bit-exact round trip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header_len = 4 + struct.calcsize("<HIIII")
    if len(blob) < header_len or blob[:4] != STORE_MAGIC:
        raise StoreFormatError(f"{path}: not a feature store (bad magic)")
    version, height, width, channels, count = struct.unpack("<HIIII", blob[4:header_len])
    if version != STORE_VERSION:
        raise StoreFormatError(f"{path}: unsupported store version {version}")
    record_bytes = 4 + 4 * height * width * channels
    expected = header_len + count * record_bytes
    if len(blob) != expected:
        raise StoreLengthError(f"{path}: expected {expected} bytes, found {len(blob)}")

    records = []
    offset = header_len
    for _ in range(count):
        (rec_id,) = struct.unpack("<I", blob[offset:offset + 4])
        data = np.frombuffer(blob, dtype="<f4", count=height * width * channels, offset=offset + 4)
        records.append((rec_id, FeatureVolume(data=data.reshape(height, width, channels).copy())))
        offset += record_bytes
    return records
