"""KD-tree build, best-bin-first queries, and the brute-force oracle."""

import math

import numpy as np
import pytest

from keysig.descriptor import describe
from keysig.detector import detect
from keysig.knn import (
    DescriptorRecord,
    IndexParams,
    QueryStats,
    brute_force_query,
    build,
    records_from_signatures,
)
from keysig.volume import normalize, synth_blobs


def random_records(n, seed=0, n_images=10):
    """Random rank-permutation vectors, the records' natural population."""
    rng = np.random.default_rng(seed)
    recs = []
    per = max(1, n // n_images)
    for i in range(n):
        recs.append(
            DescriptorRecord(
                vec=rng.permutation(64).astype(np.uint8),
                image_ref=min(i // per, n_images - 1),
                kp_ref=i % per,
            )
        )
    return recs


class TestBruteForce:
    def test_empty_records(self):
        assert brute_force_query([], np.zeros(64, np.uint8), 3) == []

    def test_tie_broken_by_refs(self):
        v = np.arange(64, dtype=np.uint8)
        recs = [
            DescriptorRecord(vec=v.copy(), image_ref=2, kp_ref=0),
            DescriptorRecord(vec=v.copy(), image_ref=1, kp_ref=5),
            DescriptorRecord(vec=v.copy(), image_ref=1, kp_ref=3),
        ]
        res = brute_force_query(recs, v, 3)
        assert [(r.image_ref, r.kp_ref) for r, _ in res] == [(1, 3), (1, 5), (2, 0)]
        assert all(d == 0 for _, d in res)

    def test_sorted_non_decreasing(self):
        recs = random_records(200, seed=1)
        q = np.random.default_rng(2).permutation(64).astype(np.uint8)
        res = brute_force_query(recs, q, 5)
        dists = [d for _, d in res]
        assert dists == sorted(dists)

    def test_exclusion(self):
        recs = random_records(50, seed=3, n_images=5)
        res = brute_force_query(recs, recs[0].vec, 50, exclude_image=0)
        assert all(r.image_ref != 0 for r, _ in res)


class TestBuild:
    def test_single_record_single_leaf(self):
        ix = build(random_records(1), IndexParams())
        assert ix.n_leaves == 1
        assert len(ix) == 1

    def test_empty_index_valid(self):
        ix = build([], IndexParams())
        assert ix.query(np.zeros(64, np.uint8), k=3) == []

    def test_identical_records_terminate(self):
        v = np.full(64, 7, dtype=np.uint8)
        recs = [DescriptorRecord(vec=v, image_ref=0, kp_ref=i) for i in range(1000)]
        ix = build(recs, IndexParams(leaf_size=16))
        assert ix.n_leaves >= math.ceil(1000 / 16)
        res = ix.query(v, k=1)
        assert res[0][1] == 0

    def test_depth_bound_on_random_records(self):
        recs = random_records(10_000, seed=5, n_images=100)
        ix = build(recs, IndexParams(leaf_size=16))
        bound = 2 * math.ceil(math.log2(10_000 / 16)) + 2
        assert ix.depth <= bound

    def test_reproducible_build(self):
        recs = random_records(500, seed=6, n_images=20)
        a = build(recs, IndexParams())
        b = build(recs, IndexParams())
        rng = np.random.default_rng(7)
        for _ in range(20):
            q = rng.permutation(64).astype(np.uint8)
            ra = [(r.image_ref, r.kp_ref, d) for r, d in a.query(q, k=5)]
            rb = [(r.image_ref, r.kp_ref, d) for r, d in b.query(q, k=5)]
            assert ra == rb


class TestQuery:
    def test_self_retrieval_distance_zero(self):
        recs = random_records(300, seed=8, n_images=10)
        ix = build(recs, IndexParams())
        res = ix.query(recs[17].vec, k=1)
        assert res[0][1] == 0

    def test_k_larger_than_count(self):
        recs = random_records(7, seed=9, n_images=7)
        ix = build(recs, IndexParams())
        res = ix.query(np.zeros(64, np.uint8), k=50, checks=10_000)
        assert len(res) == 7
        dists = [d for _, d in res]
        assert dists == sorted(dists)

    def test_exclusion_filter(self):
        recs = random_records(100, seed=10, n_images=4)
        ix = build(recs, IndexParams())
        res = ix.query(recs[0].vec, k=10, exclude_image=0, checks=10_000)
        assert res and all(r.image_ref != 0 for r, _ in res)

    def test_full_traversal_equals_brute_force(self):
        recs = random_records(400, seed=11, n_images=10)
        ix = build(recs, IndexParams(leaf_size=8))
        rng = np.random.default_rng(12)
        for _ in range(25):
            q = rng.permutation(64).astype(np.uint8)
            approx = ix.query(q, k=5, checks=ix.n_leaves)
            exact = brute_force_query(recs, q, 5)
            assert [d for _, d in approx] == [d for _, d in exact]
            assert [(r.image_ref, r.kp_ref) for r, _ in approx] == [
                (r.image_ref, r.kp_ref) for r, _ in exact
            ]

    def test_distance_eval_budget(self):
        p = IndexParams(leaf_size=16, checks=32)
        recs = random_records(5000, seed=13, n_images=50)
        ix = build(recs, p)
        rng = np.random.default_rng(14)
        for _ in range(10):
            stats = QueryStats()
            q = rng.permutation(64).astype(np.uint8)
            ix.query(q, k=2, stats=stats)
            assert stats.leaves_visited <= p.checks
            assert stats.distance_evals <= p.checks * p.leaf_size + ix.depth

    def test_recall_against_oracle_on_detector_output(self, detector_pool):
        recs = detector_pool
        assert len(recs) == 2000
        ix = build(recs, IndexParams(leaf_size=16, checks=128))
        rng = np.random.default_rng(15)
        picks = rng.choice(len(recs), size=500, replace=False)
        agree = 0
        for i in picks:
            q = recs[i].vec
            own = recs[i].image_ref
            approx = ix.query(q, k=1, exclude_image=own)
            exact = brute_force_query(recs, q, 1, exclude_image=own)
            if approx and exact and approx[0][1] == exact[0][1]:
                agree += 1
        assert agree >= 450  # >= 90% NN1 agreement at checks=128

    def test_query_int_distances(self):
        recs = random_records(64, seed=16, n_images=8)
        ix = build(recs, IndexParams())
        res = ix.query(recs[5].vec, k=3, checks=10_000)
        for _, d in res:
            assert isinstance(d, int)


class TestRecordsFromSignatures:
    def test_flatten_preserves_order(self):
        v = normalize(synth_blobs(seed=2, dims=(48, 48, 48), blobs=[((24, 24, 24), 3.0, 1.0)]))
        sig = describe(v, detect(v))
        recs = records_from_signatures([sig, sig])
        assert len(recs) == 2 * len(sig.keypoints)
        assert recs[0].image_ref == 0
        assert recs[len(sig.keypoints)].image_ref == 1
        np.testing.assert_array_equal(recs[0].vec, sig.keypoints[0].descr)


class TestConcurrency:
    def test_concurrent_queries_match_serial(self):
        from concurrent.futures import ThreadPoolExecutor

        recs = random_records(2000, seed=21, n_images=40)
        ix = build(recs, IndexParams())
        rng = np.random.default_rng(22)
        queries = [rng.permutation(64).astype(np.uint8) for _ in range(60)]
        serial = [
            [(r.image_ref, r.kp_ref, d) for r, d in ix.query(q, k=3)] for q in queries
        ]
        with ThreadPoolExecutor(max_workers=8) as pool:
            threaded = list(
                pool.map(
                    lambda q: [(r.image_ref, r.kp_ref, d) for r, d in ix.query(q, k=3)],
                    queries,
                )
            )
        assert threaded == serial
