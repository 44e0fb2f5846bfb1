"""Soft-margin triplet objective and a toy linear feature learner.

The objective is log(1 + exp(alpha * (d_pos - d_neg))) per triplet, with
triplets built exhaustively from a batch: every ground item anchors
against its matching aerial item and all non-matching ones, and vice
versa, giving 2*B*(B-1) triplets. Distances come from the azimuth
matcher, with the correlation argmax treated as fixed during
backpropagation (the usual convention for max-style selections).

The learner is a per-position channel map (a 1x1 convolution in effect):
it mixes the raw channel dimension through a D_in x D_out matrix while
preserving the spatial grid, so embeddings stay valid feature volumes
and azimuth matching remains meaningful. Gradients are derived
analytically and checked against finite differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import dsm
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    DimensionError,
    StoreFormatError,
    StoreLengthError,
    TrainingError,
)
from .featex import FeatureVolume

WEIGHTS_MAGIC = b"DSMW"

# Saturation point for the softplus: beyond it log1p(exp(x)) == x to 1e-13.
_SOFTPLUS_CUTOFF = 30.0


@dataclass(frozen=True)
class LossConfig:
    """alpha scales the margin inside the exponential (default 10)."""

    alpha: float = 10.0

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")


def _softplus(x: float) -> float:
    if x > _SOFTPLUS_CUTOFF:
        return x
    return float(np.log1p(np.exp(x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return float(e / (1.0 + e))


def triplet_loss(d_pos: float, d_neg: float, cfg: LossConfig = LossConfig()) -> float:
    """log(1 + exp(alpha * (d_pos - d_neg))), overflow-safe."""
    return _softplus(cfg.alpha * (d_pos - d_neg))


@dataclass(frozen=True)
class Triplet:
    anchor_view: str  # "ground" or "aerial"
    anchor: int
    positive: int
    negative: int


@dataclass(frozen=True)
class TripletBatch:
    batch_size: int
    triplets: tuple


def build_exhaustive_triplets(batch_size: int) -> TripletBatch:
    """All 2*B*(B-1) triplets of a batch of matched pairs.

    Each ground item anchors once per non-matching aerial item, and each
    aerial item anchors once per non-matching ground item.
    """
    if batch_size < 2:
        raise ConfigurationError(f"need a batch of at least 2 pairs, got {batch_size}")
    triplets = []
    for view in ("ground", "aerial"):
        for i in range(batch_size):
            for j in range(batch_size):
                if j != i:
                    triplets.append(Triplet(anchor_view=view, anchor=i, positive=i, negative=j))
    return TripletBatch(batch_size=batch_size, triplets=tuple(triplets))


@dataclass
class LinearEmbedder:
    """Channel-mixing weight matrix applied at every spatial position."""

    weight: np.ndarray  # (d_in, d_out), float64

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] < 1:
            raise DimensionError(f"weight must be a D_in x D_out matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DegenerateInputError("weight matrix contains non-finite values")
        self.weight = w

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class _Embedded:
    """Forward-pass record: normalized volume plus what backprop needs."""

    raw: np.ndarray  # (H, W, d_in) float64
    feat: np.ndarray  # normalized embedding, (H, W, d_out) float64
    norm: float
    volume: FeatureVolume


def _embed(embedder: LinearEmbedder, raw: np.ndarray) -> _Embedded:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[2] != embedder.d_in:
        raise DimensionError(
            f"raw features must be H x W x {embedder.d_in}, got shape {raw.shape}"
        )
    emb = raw @ embedder.weight
    norm = float(np.linalg.norm(emb))
    if norm < 1e-12:
        raise DegenerateInputError("embedding collapsed to zero; cannot normalize")
    feat = emb / norm
    vol = FeatureVolume(data=feat, normalized=True)
    return _Embedded(raw=raw, feat=feat, norm=norm, volume=vol)


@dataclass(frozen=True)
class BatchLossResult:
    loss: float
    grad: np.ndarray
    distances: np.ndarray  # (B, B): ground i vs aerial j


def batch_loss(
    embedder: LinearEmbedder,
    ground_raw,
    aerial_raw,
    cfg: LossConfig = LossConfig(),
    path: str = "spatial",
    tie: str = "first",
    seed: int = 0,
) -> BatchLossResult:
    """Mean triplet loss over the exhaustive batch, with its weight gradient.

    Every ground/aerial pair is matched (panorama when widths agree,
    crop-and-renormalize otherwise). The correlation argmax and crop
    offset stay fixed at their forward values during backprop.
    """
    if len(ground_raw) != len(aerial_raw):
        raise DimensionError("ground and aerial lists must have equal length")
    b = len(ground_raw)
    batch = build_exhaustive_triplets(b)

    grounds = [_embed(embedder, raw) for raw in ground_raw]
    aerials = [_embed(embedder, raw) for raw in aerial_raw]
    w_g = grounds[0].feat.shape[1]
    w_a = aerials[0].feat.shape[1]
    panorama = w_g == w_a

    # Forward: distance and chosen shift for every ground x aerial pair.
    distances = np.empty((b, b), dtype=np.float64)
    shifts = np.empty((b, b), dtype=np.intp)
    for i, g in enumerate(grounds):
        for j, a in enumerate(aerials):
            if panorama:
                result = dsm.match_panorama(a.volume, g.volume, path=path, tie=tie, seed=seed)
            else:
                result = dsm.match_limited_fov(a.volume, g.volume, path=path, tie=tie, seed=seed)
            distances[i, j] = result.distance
            shifts[i, j] = result.orientation.shift

    total = 0.0
    coef = np.zeros((b, b), dtype=np.float64)  # d(loss)/d(distances)
    scale = cfg.alpha / len(batch.triplets)
    for t in batch.triplets:
        if t.anchor_view == "ground":
            d_pos, d_neg = distances[t.anchor, t.positive], distances[t.anchor, t.negative]
            pos_idx, neg_idx = (t.anchor, t.positive), (t.anchor, t.negative)
        else:
            d_pos, d_neg = distances[t.positive, t.anchor], distances[t.negative, t.anchor]
            pos_idx, neg_idx = (t.positive, t.anchor), (t.negative, t.anchor)
        x = cfg.alpha * (d_pos - d_neg)
        total += _softplus(x)
        s = _sigmoid(x) * scale
        coef[pos_idx] += s
        coef[neg_idx] -= s

    loss = total / len(batch.triplets)

    # Backward: accumulate d(loss)/d(normalized embedding) per item.
    grad_feat_g = [np.zeros_like(g.feat) for g in grounds]
    grad_feat_a = [np.zeros_like(a.feat) for a in aerials]
    for i, g in enumerate(grounds):
        for j, a in enumerate(aerials):
            c = coef[i, j]
            if c == 0.0:
                continue
            s = int(shifts[i, j])
            if panorama:
                # d = 2 * (1 - <roll(F_a, -s), F_g>)
                grad_feat_g[i] += (-2.0 * c) * np.roll(a.feat, -s, axis=1)
                grad_feat_a[j] += (-2.0 * c) * np.roll(g.feat, s, axis=1)
            else:
                cols = (s + np.arange(w_g)) % w_a
                cropped = a.feat[:, cols, :]
                m = np.linalg.norm(cropped)
                p = cropped / m
                diff = g.feat - p
                d = distances[i, j]
                if d < 1e-12:
                    continue  # flat spot: zero subgradient
                g_diff = c * diff / d
                grad_feat_g[i] += g_diff
                g_crop = (-g_diff - p * np.sum(p * -g_diff)) / m
                grad_feat_a[j][:, cols, :] += g_crop

    # Through normalization and the shared weight matrix.
    grad = np.zeros_like(embedder.weight)
    for items, grads in ((grounds, grad_feat_g), (aerials, grad_feat_a)):
        for item, g_feat in zip(items, grads):
            g_emb = (g_feat - item.feat * np.sum(item.feat * g_feat)) / item.norm
            grad += item.raw.reshape(-1, embedder.d_in).T @ g_emb.reshape(-1, embedder.d_out)

    return BatchLossResult(loss=loss, grad=grad, distances=distances)


def train_toy(
    embedder: LinearEmbedder,
    pairs,
    epochs: int,
    step_size: float,
    seed: int = 0,
    cfg: LossConfig = LossConfig(),
    path: str = "spatial",
):
    """Plain gradient descent with step halving on any loss increase.

    ``pairs`` is a list of (ground_raw, aerial_raw) arrays. Returns the
    trained embedder and the loss trace (initial loss first). The trace
    is non-increasing; if no step of the current size improves the loss
    the step is halved, and training stops once the step underflows.
    """
    if len(pairs) < 2:
        raise ConfigurationError("training needs at least 2 pairs")
    ground_raw = [g for g, _ in pairs]
    aerial_raw = [a for _, a in pairs]
    weight = embedder.weight.copy()
    step = float(step_size)

    result = batch_loss(LinearEmbedder(weight), ground_raw, aerial_raw, cfg, path=path, seed=seed)
    if not np.isfinite(result.loss):
        raise TrainingError(f"initial loss is not finite: {result.loss}")
    trace = [result.loss]

    for _ in range(epochs):
        accepted = False
        while step > 0.0:
            candidate = weight - step * result.grad
            trial = batch_loss(LinearEmbedder(candidate), ground_raw, aerial_raw, cfg, path=path, seed=seed)
            if not np.isfinite(trial.loss):
                raise TrainingError(f"loss became non-finite at step size {step}")
            if trial.loss <= trace[-1] + 1e-6:
                weight = candidate
                result = trial
                accepted = True
                break
            step *= 0.5
            if step < 1e-15:
                step = 0.0
        if not accepted:
            trace.append(trace[-1])
            continue
        trace.append(result.loss)

    return LinearEmbedder(weight), trace


def separable_pairs(n_pairs: int, height: int = 2, width: int = 8, d_in: int = 4, seed: int = 0):
    """Toy dataset: each ground item is its aerial item rolled in azimuth.

    Matching pairs agree perfectly under some shift; distinct pairs are
    independent random volumes, so the batch is separable.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        aerial = rng.standard_normal((height, width, d_in))
        shift = int(rng.integers(0, width))
        ground = np.roll(aerial, -shift, axis=1) + 0.01 * rng.standard_normal((height, width, d_in))
        pairs.append((ground, aerial))
    return pairs


def save_weights(embedder: LinearEmbedder, path):
    """Write the weight matrix: magic, dims as u32 LE, float32 LE payload."""
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", embedder.d_in, embedder.d_out))
        fh.write(embedder.weight.astype("<f4").tobytes())


def load_weights(path) -> LinearEmbedder:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != WEIGHTS_MAGIC:
        raise StoreFormatError(f"{path}: not a weights file (bad magic)")
    d_in, d_out = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * d_in * d_out
    if len(blob) != expected:
        raise StoreLengthError(f"{path}: expected {expected} bytes, found {len(blob)}")
    weight = np.frombuffer(blob[12:], dtype="<f4").reshape(d_in, d_out).astype(np.float64)
    return LinearEmbedder(weight=weight)
