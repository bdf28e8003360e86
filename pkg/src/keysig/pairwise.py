"""Match accumulation and log-Jaccard pair scoring.

Every keypoint of every image queries the pooled index once (own image
excluded); accepted nearest-neighbor matches credit one directed count to
their image pair. Directed counts fold into a symmetric intersection
estimate, a Jaccard overlap J, and the distance d = -ln(J), with J = 0
represented by an infinite-distance sentinel.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .descriptor import Signature
from .errors import ConsistencyError, UndefinedScoreError
from .knn import KdIndex

INFINITE_DISTANCE = math.inf


@dataclass(frozen=True, order=True)
class PairKey:
    a: int
    b: int

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ValueError(f"PairKey requires 0 <= a < b, got ({self.a}, {self.b})")

    @staticmethod
    def of(i: int, j: int) -> "PairKey":
        if i == j:
            raise ValueError("a pair needs two distinct images")
        return PairKey(min(i, j), max(i, j))


@dataclass(frozen=True)
class MatchParams:
    ratio: float = 0.9  # on the squared-L2 distances the index reports
    min_matches: int = 1

    def __post_init__(self):
        if not (0.0 < self.ratio <= 1.0):
            raise ValueError("ratio must be in (0, 1]")
        if self.min_matches < 1:
            raise ValueError("min_matches must be >= 1")


@dataclass(frozen=True)
class PairScore:
    key: Optional[PairKey]
    c_ab: int
    c_ba: int
    intersection: float
    union_: float
    jaccard: float
    distance: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.distance)


def _check_index_matches(signatures: Sequence[Signature], ix: KdIndex) -> None:
    expected = {i: len(s.keypoints) for i, s in enumerate(signatures) if s.keypoints}
    if ix.image_counts != expected:
        raise ConsistencyError(
            "index was not built over exactly these signatures "
            f"(index holds descriptors for {len(ix.image_counts)} images, "
            f"signatures provide {len(expected)})"
        )


def _ratio_accept(d1: int, d2: Optional[int], ratio: float) -> bool:
    if d2 is None:
        return d1 == 0
    if d2 == 0:
        return d1 == 0
    return d1 / d2 < ratio


def accumulate_matches(
    signatures: Sequence[Signature],
    ix: KdIndex,
    mp: MatchParams,
    threads: int = 1,
) -> dict[PairKey, tuple[int, int]]:
    """Directed match counts per image pair, sparse (zero pairs absent).

    For each keypoint of image A the k nearest neighbors excluding A are
    fetched; n1 is the best hit (owner B), n2 the closest hit from an image
    other than B when one was fetched, else the second hit. The match is
    accepted when dist(n1)/dist(n2) < ratio, with 0/0 accepted and a zero n2
    otherwise rejecting.
    """
    _check_index_matches(signatures, ix)
    k = max(ix.params.k, 2)

    def shard(task: list[int]) -> dict[PairKey, list[int]]:
        counts: dict[PairKey, list[int]] = {}
        for a in task:
            for kp in signatures[a].keypoints:
                res = ix.query(kp.descr, k=k, exclude_image=a)
                if not res:
                    continue
                n1, d1 = res[0]
                b = n1.image_ref
                d2 = None
                for rec, dist in res[1:]:
                    if rec.image_ref != b:
                        d2 = dist
                        break
                if d2 is None and len(res) > 1:
                    d2 = res[1][1]
                if not _ratio_accept(d1, d2, mp.ratio):
                    continue
                key = PairKey.of(a, b)
                cell = counts.setdefault(key, [0, 0])
                cell[0 if a == key.a else 1] += 1
        return counts

    image_ids = list(range(len(signatures)))
    if threads <= 1:
        shards = [shard(image_ids)]
    else:
        chunks = [image_ids[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            shards = list(pool.map(shard, chunks))

    merged: dict[PairKey, list[int]] = {}
    for counts in shards:
        for key, (ab, ba) in counts.items():
            cell = merged.setdefault(key, [0, 0])
            cell[0] += ab
            cell[1] += ba
    return {key: (ab, ba) for key, (ab, ba) in merged.items()}


def score_pair(
    size_a: int,
    size_b: int,
    c_ab: int,
    c_ba: int,
    key: Optional[PairKey] = None,
) -> PairScore:
    """Jaccard overlap and log distance from directed match counts.

    intersection = min((c_ab + c_ba) / 2, min(|A|, |B|)); union follows by
    inclusion-exclusion; d = -ln(J), infinite when J = 0. Natural log is the
    fixed convention throughout (reports echo it).
    """
    if size_a <= 0 or size_b <= 0:
        raise UndefinedScoreError("pair score undefined for empty keypoint sets")
    intersection = min((c_ab + c_ba) / 2.0, float(min(size_a, size_b)))
    union_ = float(size_a + size_b) - intersection
    jaccard = intersection / union_ if union_ > 0 else 0.0
    distance = -math.log(jaccard) if jaccard > 0 else INFINITE_DISTANCE
    return PairScore(
        key=key,
        c_ab=c_ab,
        c_ba=c_ba,
        intersection=intersection,
        union_=union_,
        jaccard=jaccard,
        distance=distance,
    )


def score_dataset(
    signatures: Sequence[Signature],
    ix: KdIndex,
    mp: MatchParams,
    threads: int = 1,
) -> list[PairScore]:
    """All pairs with at least ``min_matches`` total credits, key-sorted.

    Pairs never co-retrieved are implicitly at J = 0 and are not emitted;
    the sparse result never materializes the full O(N^2) pair table.
    """
    counts = accumulate_matches(signatures, ix, mp, threads=threads)
    scores = []
    for key in sorted(counts):
        c_ab, c_ba = counts[key]
        if c_ab + c_ba < mp.min_matches:
            continue
        scores.append(
            score_pair(
                len(signatures[key.a].keypoints),
                len(signatures[key.b].keypoints),
                c_ab,
                c_ba,
                key=key,
            )
        )
    return scores


def no_evidence_score(key: PairKey, size_a: int, size_b: int) -> PairScore:
    """Sentinel score for a pair with zero accepted matches."""
    return PairScore(
        key=key,
        c_ab=0,
        c_ba=0,
        intersection=0.0,
        union_=float(size_a + size_b),
        jaccard=0.0,
        distance=INFINITE_DISTANCE,
    )
