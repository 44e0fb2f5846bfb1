"""Shared oracles for the loss-gradient tests."""

import numpy as np

from crossview import dsm
from crossview.loss import LinearEmbedder, LossConfig, batch_loss


def fd_gradient(weight, ground_raw, aerial_raw, cfg=LossConfig(), h=1e-4):
    """Central finite differences of the batch loss over every weight entry."""
    grad = np.zeros_like(weight, dtype=np.float64)
    for idx in np.ndindex(*weight.shape):
        plus = weight.copy()
        plus[idx] += h
        minus = weight.copy()
        minus[idx] -= h
        lp = batch_loss(LinearEmbedder(plus), ground_raw, aerial_raw, cfg).loss
        lm = batch_loss(LinearEmbedder(minus), ground_raw, aerial_raw, cfg).loss
        grad[idx] = (lp - lm) / (2.0 * h)
    return grad


def min_peak_gap(embedder, ground_raw, aerial_raw):
    """Smallest top-two correlation gap over all pairs; large means tie-free."""
    from crossview.loss import _embed

    grounds = [_embed(embedder, r) for r in ground_raw]
    aerials = [_embed(embedder, r) for r in aerial_raw]
    gap = np.inf
    for g in grounds:
        for a in aerials:
            scores = np.sort(dsm.correlate_spatial(a.volume, g.volume).scores)
            gap = min(gap, scores[-1] - scores[-2])
    return gap


def tie_free_instance(seed, b=3, height=2, w_a=6, w_g=6, d_in=8, min_gap=1e-3):
    """Random batch whose correlations stay clear of argmax ties.

    Draws from successive seeds until every pair's top-two gap exceeds
    ``min_gap``, so finite-difference probes cannot flip a shift.
    """
    attempt = seed
    while True:
        rng = np.random.default_rng(attempt)
        ground_raw = [rng.standard_normal((height, w_g, d_in)) for _ in range(b)]
        aerial_raw = [rng.standard_normal((height, w_a, d_in)) for _ in range(b)]
        weight = rng.standard_normal((d_in, 4))
        embedder = LinearEmbedder(weight)
        if min_peak_gap(embedder, ground_raw, aerial_raw) > min_gap:
            return embedder, ground_raw, aerial_raw
        attempt += 1000003
