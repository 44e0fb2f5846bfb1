"""Exhaustive aerial-feature index, querying, and evaluation metrics.

The index holds unit-normalized volumes (optionally with precomputed
Fourier coefficients) and is immutable after build; queries rank every
entry by match distance. Metrics: recall at K, recall at a database
percentage, recall within a geographic radius, and orientation accuracy
plus median circular error over correctly localized queries.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsm
from .errors import ConfigurationError, DegenerateInputError, DimensionError
from .featex import FeatureVolume, l2_normalize

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class IndexEntry:
    id: int
    volume: FeatureVolume
    latlon: tuple | None = None
    cache: dsm.FourierCache | None = None


@dataclass(frozen=True)
class Index:
    entries: tuple
    height: int
    width: int
    channels: int

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class QueryResult:
    """Candidates ranked by ascending distance; ties broken by ascending id."""

    query_id: int | None
    ranked: tuple  # of (id, distance, OrientationEstimate)


@dataclass(frozen=True)
class EvalReport:
    recall_at: dict
    recall_at_1pct: float
    orien_acc: float | None
    median_error_deg: float | None
    n: int
    dist_recall_5m: float | None = None


def build_index(store, use_fft_cache: bool = False, geo=None) -> Index:
    """Normalize and wrap (id, volume) records into a query-ready index.

    ``geo`` optionally maps ids to (lat, lon) degrees. Entries are kept in
    ascending id order so distance ties rank deterministically.
    """
    records = sorted(store, key=lambda rec: rec[0])
    if not records:
        raise ConfigurationError("cannot build an index from an empty store")
    ids = [rec[0] for rec in records]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate ids in store")

    dims = {(rec[1].height, rec[1].width, rec[1].channels) for rec in records}
    if len(dims) != 1:
        raise DimensionError(f"store mixes volume dims: {sorted(dims)}")
    height, width, channels = dims.pop()

    entries = []
    for entry_id, volume in records:
        try:
            normalized = volume if volume.normalized else l2_normalize(volume)
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"entry {entry_id}: {exc}") from exc
        cache = dsm.fourier_cache(normalized) if use_fft_cache else None
        latlon = None if geo is None else geo.get(entry_id)
        entries.append(IndexEntry(id=entry_id, volume=normalized, latlon=latlon, cache=cache))
    return Index(entries=tuple(entries), height=height, width=width, channels=channels)


def query(
    idx: Index,
    f_g: FeatureVolume,
    k: int,
    path: str = "spectral",
    tie: str = "first",
    seed: int = 0,
    query_id: int | None = None,
) -> QueryResult:
    """Rank the top ``k`` index entries for a ground volume.

    Full-width queries use the panorama match, narrower ones the
    crop-and-renormalize match. Read-only and deterministic.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if f_g.height != idx.height or f_g.channels != idx.channels:
        raise DimensionError(
            f"query dims {f_g.height}x{f_g.channels} do not match "
            f"index {idx.height}x{idx.channels}"
        )
    if f_g.width > idx.width:
        raise DimensionError(f"query width {f_g.width} exceeds index width {idx.width}")
    ground = f_g if f_g.normalized else l2_normalize(f_g)
    matcher = dsm.match_panorama if ground.width == idx.width else dsm.match_limited_fov
    g_spec = dsm.ground_spectrum(ground, idx.width) if path == "spectral" else None

    scored = []
    for entry in idx.entries:
        result = matcher(
            entry.volume, ground, path=path, tie=tie, seed=seed,
            cache=entry.cache, g_spec=g_spec,
        )
        scored.append((entry.id, result.distance, result.orientation))
    scored.sort(key=lambda item: item[1])  # stable: preserves ascending id on ties
    return QueryResult(query_id=query_id, ranked=tuple(scored[: min(k, len(scored))]))


def _require_gt(results, gt):
    for res in results:
        if res.query_id not in gt:
            raise ConfigurationError(f"query {res.query_id} has no ground-truth id")


def recall_at_k(results, gt, k: int) -> float:
    """Fraction of queries whose true id appears in their top k."""
    _require_gt(results, gt)
    hits = sum(1 for res in results if gt[res.query_id] in [r[0] for r in res.ranked[:k]])
    return hits / len(results)


def recall_at_percent(results, gt, n_database: int, pct: float = 1.0) -> float:
    """recall_at_k with k set to ceil(n_database * pct / 100)."""
    return recall_at_k(results, gt, math.ceil(n_database * pct / 100.0))


def haversine_m(lat1, lon1, lat2, lon2) -> float:
    """Great-circle distance in meters on a spherical earth."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def distance_recall(results, geo, gt_pos, k: int, radius_m: float = 5.0) -> float:
    """Fraction of queries with any top-k candidate within ``radius_m``."""
    hits = 0
    for res in results:
        if res.query_id not in gt_pos:
            raise ConfigurationError(f"query {res.query_id} has no ground-truth position")
        qlat, qlon = gt_pos[res.query_id]
        found = False
        for cand_id, _, _ in res.ranked[:k]:
            if cand_id not in geo:
                raise ConfigurationError(f"index entry {cand_id} has no coordinates")
            clat, clon = geo[cand_id]
            if haversine_m(qlat, qlon, clat, clon) <= radius_m:
                found = True
                break
        hits += found
    return hits / len(results)


def circular_error_deg(estimated: float, truth: float) -> float:
    """Absolute azimuth difference folded into [0, 180]."""
    delta = abs(estimated - truth) % 360.0
    return min(delta, 360.0 - delta)


@dataclass(frozen=True)
class OrientationMetrics:
    orien_acc: float | None
    median_error_deg: float | None
    n_correct: int


def orientation_metrics(results, gt, gt_azimuth, fov: float) -> OrientationMetrics:
    """Orientation accuracy and median error over top-1-correct queries.

    A query counts once its top-1 retrieval is the true id; its error is
    the circular difference between the top-1 orientation estimate and
    the true azimuth, and it succeeds when that is at most 10% of the
    field of view. An empty correct subset reports None, not zero.
    """
    _require_gt(results, gt)
    errors = []
    for res in results:
        if not res.ranked or res.ranked[0][0] != gt[res.query_id]:
            continue
        if res.query_id not in gt_azimuth:
            raise ConfigurationError(f"query {res.query_id} has no ground-truth azimuth")
        est = res.ranked[0][2].azimuth_deg
        errors.append(circular_error_deg(est, gt_azimuth[res.query_id]))
    if not errors:
        return OrientationMetrics(orien_acc=None, median_error_deg=None, n_correct=0)
    threshold = 0.10 * fov
    acc = sum(1 for e in errors if e <= threshold) / len(errors)
    return OrientationMetrics(
        orien_acc=acc,
        median_error_deg=float(np.median(errors)),
        n_correct=len(errors),
    )


def evaluate(
    results,
    gt,
    n_database: int,
    ks=(1, 5, 10),
    pct: float = 1.0,
    gt_azimuth=None,
    fov: float | None = None,
    geo=None,
    gt_pos=None,
    radius_m: float = 5.0,
) -> EvalReport:
    """Assemble the full evaluation report from ranked query results."""
    recall = {k: recall_at_k(results, gt, k) for k in ks}
    pct_recall = recall_at_percent(results, gt, n_database, pct)
    orien = OrientationMetrics(None, None, 0)
    if gt_azimuth is not None and fov is not None:
        orien = orientation_metrics(results, gt, gt_azimuth, fov)
    dist = None
    if geo is not None and gt_pos is not None:
        dist = distance_recall(results, geo, gt_pos, k=max(ks), radius_m=radius_m)
    return EvalReport(
        recall_at=recall,
        recall_at_1pct=pct_recall,
        orien_acc=orien.orien_acc,
        median_error_deg=orien.median_error_deg,
        n=len(results),
        dist_recall_5m=dist,
    )


@dataclass(frozen=True)
class BenchmarkReport:
    seconds_per_query: dict
    flops: dsm.FlopModel


def benchmark(idx: Index, queries, paths=("spatial", "spectral")) -> BenchmarkReport:
    """Mean wall time per query for each correlation path, plus flop counts."""
    timings = {}
    for path in paths:
        start = time.perf_counter()
        for ground in queries:
            query(idx, ground, k=1, path=path)
        timings[path] = (time.perf_counter() - start) / len(queries)
    flops = dsm.flop_model(len(idx), idx.height, idx.width, idx.channels)
    return BenchmarkReport(seconds_per_query=timings, flops=flops)
