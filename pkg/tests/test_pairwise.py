"""Match accumulation, Jaccard scoring, and dataset-level symmetry."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keysig.descriptor import Keypoint, Signature
from keysig.errors import ConsistencyError, UndefinedScoreError
from keysig.knn import IndexParams, brute_force_query, build, records_from_signatures
from keysig.pairwise import (
    MatchParams,
    PairKey,
    PairScore,
    accumulate_matches,
    no_evidence_score,
    score_dataset,
    score_pair,
)

IDENTITY = np.eye(3, dtype=np.float32)


def kp_from_vec(vec) -> Keypoint:
    return Keypoint(
        pos=(5.0, 5.0, 5.0),
        sigma=2.0,
        frame=IDENTITY,
        descr=np.asarray(vec, dtype=np.uint8),
        dog_value=0.1,
    )


def sig_of(image_id, vecs, subject="s") -> Signature:
    return Signature(
        image_id=image_id,
        subject_id=subject,
        keypoints=[kp_from_vec(v) for v in vecs],
        source_dims=(16, 16, 16),
        source_voxel_bytes=2,
    )


def perm_shift(k: int) -> np.ndarray:
    """Cyclic shift of the identity ranks: controlled mutual distances."""
    return np.roll(np.arange(64, dtype=np.uint8), k)


class TestPairKey:
    def test_canonical_order(self):
        assert PairKey.of(5, 2) == PairKey(2, 5)

    def test_rejects_self_pair(self):
        with pytest.raises(ValueError):
            PairKey.of(3, 3)

    def test_sortable(self):
        keys = [PairKey(0, 2), PairKey(0, 1), PairKey(1, 2)]
        assert sorted(keys) == [PairKey(0, 1), PairKey(0, 2), PairKey(1, 2)]


class TestScorePair:
    def test_identical_sets(self):
        s = score_pair(100, 100, 100, 100)
        assert s.intersection == 100
        assert s.union_ == 100
        assert s.jaccard == 1.0
        assert s.distance == 0.0

    def test_worked_example_ln9(self):
        s = score_pair(100, 200, 40, 20)
        assert s.intersection == 30
        assert s.union_ == 270
        assert abs(s.jaccard - 1.0 / 9.0) < 1e-12
        assert abs(s.distance - math.log(9.0)) < 1e-9

    def test_zero_matches_infinite_sentinel(self):
        s = score_pair(50, 60, 0, 0)
        assert s.jaccard == 0.0
        assert math.isinf(s.distance)
        assert not s.finite

    def test_intersection_clamped_to_smaller_set(self):
        s = score_pair(10, 100, 100, 100)
        assert s.intersection == 10
        assert s.union_ == 100

    def test_zero_size_rejected(self):
        with pytest.raises(UndefinedScoreError):
            score_pair(0, 10, 0, 0)

    def test_distance_monotone_in_jaccard(self):
        scores = [score_pair(100, 100, c, c) for c in (10, 40, 80, 100)]
        js = [s.jaccard for s in scores]
        ds = [s.distance for s in scores]
        assert js == sorted(js)
        assert ds == sorted(ds, reverse=True)

    @given(
        size_a=st.integers(min_value=1, max_value=5000),
        size_b=st.integers(min_value=1, max_value=5000),
        c_ab=st.integers(min_value=0, max_value=6000),
        c_ba=st.integers(min_value=0, max_value=6000),
    )
    @settings(max_examples=300, deadline=None)
    def test_bounds_always_hold(self, size_a, size_b, c_ab, c_ba):
        s = score_pair(size_a, size_b, c_ab, c_ba)
        assert 0.0 <= s.jaccard <= 1.0
        assert s.intersection <= min(size_a, size_b)
        assert s.union_ >= max(size_a, size_b)
        assert s.union_ == size_a + size_b - s.intersection
        assert s.distance >= 0.0
        if s.jaccard == 0.0:
            assert math.isinf(s.distance)
        else:
            assert abs(s.distance - (-math.log(s.jaccard))) < 1e-12


class TestAccumulateMatches:
    def test_single_image_empty_map(self):
        sig = sig_of("a", [perm_shift(0), perm_shift(7)])
        ix = build(records_from_signatures([sig]), IndexParams())
        assert accumulate_matches([sig], ix, MatchParams()) == {}

    def test_duplicate_images_full_credit(self):
        vecs = [perm_shift(k) for k in (0, 9, 21, 33)]
        a = sig_of("a", vecs)
        b = sig_of("b", vecs)
        ix = build(records_from_signatures([a, b]), IndexParams())
        counts = accumulate_matches([a, b], ix, MatchParams())
        assert counts == {PairKey(0, 1): (4, 4)}

    def test_hand_built_three_image_dataset(self):
        # image 0 and image 1 share two near-identical descriptors; image 2
        # is far from both. Expected counts derived with the brute-force
        # oracle and the ratio rule evaluated by hand below.
        base0 = perm_shift(0)
        base1 = perm_shift(1)
        far = [np.asarray(np.random.default_rng(s).permutation(64), np.uint8) for s in (100, 101, 102)]
        sig0 = sig_of("a", [base0, perm_shift(30)])
        sig1 = sig_of("b", [base1, perm_shift(45)])
        sig2 = sig_of("c", far)
        sigs = [sig0, sig1, sig2]
        recs = records_from_signatures(sigs)
        ix = build(recs, IndexParams())
        mp = MatchParams(ratio=0.9)

        expected = {}
        for i, sig in enumerate(sigs):
            for kp in sig.keypoints:
                res = brute_force_query(recs, kp.descr, 2, exclude_image=i)
                (n1, d1), (n2, d2) = res[0], res[1]
                if d2 == 0:
                    ok = d1 == 0
                else:
                    ok = d1 / d2 < mp.ratio
                if ok:
                    key = PairKey.of(i, n1.image_ref)
                    cell = expected.setdefault(key, [0, 0])
                    cell[0 if i == key.a else 1] += 1
        expected = {k: tuple(v) for k, v in expected.items()}

        got = accumulate_matches(sigs, ix, mp)
        assert got == expected
        assert PairKey(0, 1) in got  # the engineered near-match pair

    def test_index_signature_mismatch(self):
        a = sig_of("a", [perm_shift(0)])
        b = sig_of("b", [perm_shift(5)])
        ix = build(records_from_signatures([a]), IndexParams())
        with pytest.raises(ConsistencyError):
            accumulate_matches([a, b], ix, MatchParams())

    def test_threaded_matches_serial(self):
        rng = np.random.default_rng(0)
        sigs = []
        for i in range(6):
            vecs = [rng.permutation(64).astype(np.uint8) for _ in range(8)]
            sigs.append(sig_of(f"im{i}", vecs))
        ix = build(records_from_signatures(sigs), IndexParams())
        serial = accumulate_matches(sigs, ix, MatchParams())
        threaded = accumulate_matches(sigs, ix, MatchParams(), threads=4)
        assert serial == threaded


class TestScoreDataset:
    def test_two_duplicates_zero_distance(self):
        vecs = [perm_shift(k) for k in (0, 11, 22)]
        a = sig_of("a", vecs)
        b = sig_of("b", vecs)
        ix = build(records_from_signatures([a, b]), IndexParams())
        scores = score_dataset([a, b], ix, MatchParams())
        assert len(scores) == 1
        s = scores[0]
        assert s.key == PairKey(0, 1)
        assert s.jaccard == 1.0
        assert s.distance == 0.0

    def test_no_self_pairs(self):
        rng = np.random.default_rng(1)
        sigs = [
            sig_of(f"im{i}", [rng.permutation(64).astype(np.uint8) for _ in range(5)])
            for i in range(5)
        ]
        ix = build(records_from_signatures(sigs), IndexParams())
        for s in score_dataset(sigs, ix, MatchParams()):
            assert s.key.a != s.key.b

    def test_min_matches_filters(self):
        vecs = [perm_shift(k) for k in (0, 11)]
        a = sig_of("a", vecs)
        b = sig_of("b", vecs)
        ix = build(records_from_signatures([a, b]), IndexParams())
        assert score_dataset([a, b], ix, MatchParams(min_matches=5)) == []

    def test_symmetry_under_image_permutation(self):
        rng = np.random.default_rng(2)
        shared = [perm_shift(k) for k in (0, 13, 26)]
        sigs = [
            sig_of("a", shared + [rng.permutation(64).astype(np.uint8)]),
            sig_of("b", shared),
            sig_of("c", [rng.permutation(64).astype(np.uint8) for _ in range(4)]),
        ]
        ix1 = build(records_from_signatures(sigs), IndexParams())
        s1 = score_dataset(sigs, ix1, MatchParams())
        rev = list(reversed(sigs))
        ix2 = build(records_from_signatures(rev), IndexParams())
        s2 = score_dataset(rev, ix2, MatchParams())
        remap = {0: 2, 1: 1, 2: 0}

        def norm(scores, m):
            out = {}
            for s in scores:
                key = PairKey.of(m[s.key.a], m[s.key.b])
                flip = m[s.key.a] > m[s.key.b]
                out[key] = (
                    (s.c_ba, s.c_ab) if flip else (s.c_ab, s.c_ba),
                    round(s.jaccard, 12),
                )
            return out

        assert norm(s1, {0: 0, 1: 1, 2: 2}) == norm(s2, remap)

    def test_sparse_map_bounded_by_directed_matches(self):
        rng = np.random.default_rng(3)
        sigs = [
            sig_of(f"im{i}", [rng.permutation(64).astype(np.uint8) for _ in range(6)])
            for i in range(8)
        ]
        ix = build(records_from_signatures(sigs), IndexParams())
        counts = accumulate_matches(sigs, ix, MatchParams())
        total_directed = sum(ab + ba for ab, ba in counts.values())
        assert len(counts) <= total_directed


class TestNoEvidence:
    def test_sentinel_fields(self):
        s = no_evidence_score(PairKey(0, 1), 10, 20)
        assert s.jaccard == 0.0
        assert math.isinf(s.distance)
        assert s.union_ == 30
