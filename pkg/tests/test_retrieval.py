import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_volume
from crossview.dsm import OrientationEstimate
from crossview.errors import ConfigurationError, DegenerateInputError, DimensionError
from crossview.featex import FeatureVolume, crop_columns, l2_normalize
from crossview.retrieval import (
    QueryResult,
    benchmark,
    build_index,
    circular_error_deg,
    distance_recall,
    evaluate,
    haversine_m,
    orientation_metrics,
    query,
    recall_at_k,
    recall_at_percent,
)

METERS_PER_DEG_LAT = 111_194.9266  # pi * 6371000 / 180


def store_of(rng, n, h=4, w=8, c=2):
    return [(i, random_volume(rng, h, w, c)) for i in range(n)]


def fake_result(qid, ranked_ids, azimuths=None):
    ranked = []
    for rank, rid in enumerate(ranked_ids):
        az = 0.0 if azimuths is None else azimuths[rank]
        est = OrientationEstimate(shift=0, azimuth_deg=az, peak_score=1.0, tie_count=1)
        ranked.append((rid, 0.01 * rank, est))
    return QueryResult(query_id=qid, ranked=tuple(ranked))


class TestBuildIndex:
    def test_single_entry_cache_shape(self, rng):
        idx = build_index(store_of(rng, 1, h=4, w=64, c=16), use_fft_cache=True)
        assert len(idx) == 1
        assert idx.entries[0].cache.coeffs.shape == (4, 64 // 2 + 1, 16)

    def test_cache_flag_does_not_change_rankings(self, rng):
        store = store_of(rng, 6)
        ground = random_volume(np.random.default_rng(1), 4, 8, 2)
        plain = query(build_index(store), ground, k=6, path="spectral")
        cached = query(build_index(store, use_fft_cache=True), ground, k=6, path="spectral")
        assert [r[0] for r in plain.ranked] == [r[0] for r in cached.ranked]
        np.testing.assert_array_equal(
            [r[1] for r in plain.ranked], [r[1] for r in cached.ranked]
        )

    def test_normalizes_unnormalized_entries(self, rng):
        raw = FeatureVolume(data=rng.standard_normal((2, 4, 2)).astype(np.float32) * 7)
        idx = build_index([(0, raw)])
        assert idx.entries[0].volume.normalized

    def test_mixed_dims_rejected(self, rng):
        store = [(0, random_volume(rng, 2, 4, 2)), (1, random_volume(rng, 2, 6, 2))]
        with pytest.raises(DimensionError):
            build_index(store)

    def test_zero_volume_error_names_the_id(self):
        store = [(7, FeatureVolume(data=np.zeros((2, 4, 2), dtype=np.float32)))]
        with pytest.raises(DegenerateInputError, match="7"):
            build_index(store)

    def test_duplicate_ids_rejected(self, rng):
        store = [(3, random_volume(rng, 2, 4, 2)), (3, random_volume(rng, 2, 4, 2))]
        with pytest.raises(ConfigurationError):
            build_index(store)

    def test_empty_store_rejected(self):
        with pytest.raises(ConfigurationError):
            build_index([])


class TestQuery:
    def test_self_retrieval(self, rng):
        store = store_of(rng, 8)
        idx = build_index(store)
        result = query(idx, store[3][1], k=1, path="spatial", query_id=3)
        assert result.ranked[0][0] == 3
        assert result.ranked[0][1] <= 1e-5

    def test_rolled_query_recovers_id_and_shift(self, rng):
        store = store_of(rng, 8)
        idx = build_index(store)
        rolled = FeatureVolume(data=np.roll(store[5][1].data, -7, axis=1), normalized=True)
        result = query(idx, rolled, k=1)
        assert result.ranked[0][0] == 5
        assert result.ranked[0][2].shift == 7

    def test_identical_entries_tie_break_by_id(self, rng):
        vol = random_volume(rng, 2, 4, 2)
        idx = build_index([(9, vol), (2, vol)])
        result = query(idx, vol, k=2, path="spatial")
        assert [r[0] for r in result.ranked] == [2, 9]
        assert result.ranked[0][1] == result.ranked[1][1]

    def test_limited_fov_query(self, rng):
        store = store_of(rng, 6, h=4, w=16, c=3)
        idx = build_index(store)
        narrow = l2_normalize(crop_columns(store[2][1], 5, 6))
        result = query(idx, narrow, k=1, path="spatial")
        assert result.ranked[0][0] == 2
        assert result.ranked[0][2].shift == 5

    def test_spatial_and_spectral_agree_on_top_one(self, rng):
        store = store_of(rng, 10)
        idx = build_index(store, use_fft_cache=True)
        for qid in range(5):
            ground = FeatureVolume(data=np.roll(store[qid][1].data, -2, axis=1), normalized=True)
            spa = query(idx, ground, k=1, path="spatial")
            spe = query(idx, ground, k=1, path="spectral")
            assert spa.ranked[0][0] == spe.ranked[0][0] == qid

    def test_repeated_query_bit_identical(self, rng):
        store = store_of(rng, 6)
        idx = build_index(store, use_fft_cache=True)
        ground = random_volume(np.random.default_rng(2), 4, 8, 2)
        assert query(idx, ground, k=6) == query(idx, ground, k=6)

    def test_k_and_dims_validation(self, rng):
        idx = build_index(store_of(rng, 4))
        with pytest.raises(ConfigurationError):
            query(idx, random_volume(rng, 4, 8, 2), k=0)
        with pytest.raises(DimensionError):
            query(idx, random_volume(rng, 3, 8, 2), k=1)
        with pytest.raises(DimensionError):
            query(idx, random_volume(rng, 4, 9, 2), k=1)

    def test_k_larger_than_index_truncates(self, rng):
        idx = build_index(store_of(rng, 4))
        assert len(query(idx, random_volume(rng, 4, 8, 2), k=100).ranked) == 4


class TestRecallAtK:
    def test_perfect_results(self):
        results = [fake_result(q, [q, 99]) for q in range(5)]
        gt = {q: q for q in range(5)}
        assert recall_at_k(results, gt, 1) == 1.0

    def test_ground_truth_at_rank_two(self):
        results = [fake_result(q, [99, q]) for q in range(5)]
        gt = {q: q for q in range(5)}
        assert recall_at_k(results, gt, 1) == 0.0
        assert recall_at_k(results, gt, 2) == 1.0

    def test_missing_ground_truth_rejected(self):
        with pytest.raises(ConfigurationError):
            recall_at_k([fake_result(0, [0])], {}, 1)

    def test_uniform_random_ranking_hits_k_over_n(self):
        rng = np.random.default_rng(0)
        n, k, m = 100, 10, 400
        results = [fake_result(q, list(rng.permutation(n))) for q in range(m)]
        gt = {q: q % n for q in range(m)}
        assert abs(recall_at_k(results, gt, k) - k / n) <= 0.05

    def test_monotone_in_k(self):
        rng = np.random.default_rng(3)
        results = [fake_result(q, list(rng.permutation(20))) for q in range(30)]
        gt = {q: q % 20 for q in range(30)}
        values = [recall_at_k(results, gt, k) for k in range(1, 21)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0


class TestRecallAtPercent:
    def test_database_of_8884_uses_k_89(self):
        results = [fake_result(0, list(range(1, 8885)))]
        gt_hit = {0: 89}   # sits at rank 89 exactly
        gt_miss = {0: 90}
        assert recall_at_percent(results, gt_hit, n_database=8884, pct=1) == 1.0
        assert recall_at_percent(results, gt_miss, n_database=8884, pct=1) == 0.0

    def test_small_database_floors_at_one(self):
        results = [fake_result(0, [5, 6])]
        assert recall_at_percent(results, {0: 5}, n_database=50, pct=1) == 1.0
        assert recall_at_percent(results, {0: 6}, n_database=50, pct=1) == 0.0

    def test_perfect(self):
        results = [fake_result(q, [q]) for q in range(4)]
        assert recall_at_percent(results, {q: q for q in range(4)}, n_database=400) == 1.0


class TestDistanceRecall:
    def test_identical_coordinates_succeed(self):
        results = [fake_result(0, [1])]
        assert distance_recall(results, {1: (10.0, 20.0)}, {0: (10.0, 20.0)}, k=1) == 1.0

    def test_eleven_meters_offset_fails_at_five(self):
        offset = 0.0001  # degrees latitude
        assert abs(haversine_m(0.0, 0.0, offset, 0.0) - 11.12) <= 0.05
        results = [fake_result(0, [1])]
        assert distance_recall(results, {1: (offset, 0.0)}, {0: (0.0, 0.0)}, k=1, radius_m=5.0) == 0.0

    def test_any_candidate_within_radius_counts(self):
        near = 3.0 / METERS_PER_DEG_LAT
        far = 300.0 / METERS_PER_DEG_LAT
        results = [fake_result(0, [1, 2])]
        geo = {1: (far, 0.0), 2: (near, 0.0)}
        assert distance_recall(results, geo, {0: (0.0, 0.0)}, k=2, radius_m=5.0) == 1.0
        assert distance_recall(results, geo, {0: (0.0, 0.0)}, k=1, radius_m=5.0) == 0.0

    def test_missing_coordinates_rejected(self):
        results = [fake_result(0, [1])]
        with pytest.raises(ConfigurationError):
            distance_recall(results, {}, {0: (0.0, 0.0)}, k=1)
        with pytest.raises(ConfigurationError):
            distance_recall(results, {1: (0.0, 0.0)}, {}, k=1)


class TestOrientationMetrics:
    def test_threshold_is_ten_percent_of_fov(self):
        results = [fake_result(0, [0], azimuths=[30.0])]
        metrics = orientation_metrics(results, {0: 0}, {0: 0.0}, fov=360.0)
        assert metrics.orien_acc == 1.0

    def test_boundary_error_counts_as_success(self):
        results = [fake_result(0, [0], azimuths=[36.0])]
        metrics = orientation_metrics(results, {0: 0}, {0: 0.0}, fov=360.0)
        assert metrics.orien_acc == 1.0

    def test_circular_wraparound(self):
        assert circular_error_deg(359.0, 1.0) == 2.0
        results = [fake_result(0, [0], azimuths=[359.0])]
        metrics = orientation_metrics(results, {0: 0}, {0: 1.0}, fov=10.0)
        assert metrics.median_error_deg == 2.0
        assert metrics.orien_acc == 0.0  # threshold is 1 degree

    def test_median_of_even_count_is_midpoint(self):
        azimuths = {0: 1.0, 1: 2.0, 2: 3.0, 3: 100.0}
        results = [fake_result(q, [q], azimuths=[0.0]) for q in range(4)]
        metrics = orientation_metrics(results, {q: q for q in range(4)}, azimuths, fov=360.0)
        assert metrics.median_error_deg == 2.5
        assert metrics.orien_acc == 0.75

    def test_only_top1_correct_queries_count(self):
        results = [
            fake_result(0, [0], azimuths=[5.0]),
            fake_result(1, [99], azimuths=[170.0]),  # mislocalized: excluded
        ]
        metrics = orientation_metrics(results, {0: 0, 1: 1}, {0: 0.0, 1: 0.0}, fov=360.0)
        assert metrics.n_correct == 1
        assert metrics.orien_acc == 1.0

    def test_empty_correct_subset_is_undefined(self):
        results = [fake_result(0, [99], azimuths=[0.0])]
        metrics = orientation_metrics(results, {0: 0}, {0: 0.0}, fov=360.0)
        assert metrics.orien_acc is None
        assert metrics.median_error_deg is None

    @given(st.floats(0, 360, exclude_max=True), st.floats(0, 360, exclude_max=True))
    def test_circular_error_symmetric_and_bounded(self, a, b):
        err = circular_error_deg(a, b)
        assert err == circular_error_deg(b, a)
        assert 0.0 <= err <= 180.0


class TestEvaluateAndBenchmark:
    def test_full_report(self, rng):
        store = store_of(rng, 12)
        idx = build_index(store)
        results = []
        for qid in range(6):
            ground = FeatureVolume(data=np.roll(store[qid][1].data, -3, axis=1), normalized=True)
            results.append(query(idx, ground, k=12, path="spatial", query_id=qid))
        gt = {q: q for q in range(6)}
        azimuths = {q: 3 * 360.0 / 8 for q in range(6)}
        geo = {i: (i * 0.01, 0.0) for i in range(12)}
        gt_pos = {q: (q * 0.01, 0.0) for q in range(6)}
        report = evaluate(
            results, gt, n_database=12, ks=(1, 5), gt_azimuth=azimuths, fov=360.0,
            geo=geo, gt_pos=gt_pos,
        )
        assert report.recall_at[1] == 1.0
        assert report.recall_at_1pct == 1.0
        assert report.orien_acc == 1.0
        assert report.median_error_deg == 0.0
        assert report.dist_recall_5m == 1.0
        assert report.n == 6

    def test_benchmark_reports_both_paths(self, rng):
        idx = build_index(store_of(rng, 16), use_fft_cache=True)
        queries = [random_volume(np.random.default_rng(s), 4, 8, 2) for s in range(3)]
        report = benchmark(idx, queries)
        assert set(report.seconds_per_query) == {"spatial", "spectral"}
        assert all(v > 0 for v in report.seconds_per_query.values())
        assert report.flops.ratio == 13.0 / 16.0
