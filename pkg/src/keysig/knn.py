"""Pooled approximate K-NN search over rank descriptors.

One KD-tree holds every descriptor of every image. Queries run best-bin-first
under a fixed budget of leaf visits (``checks``); with a budget covering all
leaves the search degenerates to an exact scan and matches the brute-force
oracle. Distances are squared L2 on the uint8 rank vectors, computed in wide
integer arithmetic so results are exact and platform-independent.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .descriptor import DESCR_LEN, Signature


class DescriptorRecord(NamedTuple):
    vec: np.ndarray  # (64,) uint8
    image_ref: int
    kp_ref: int


@dataclass(frozen=True)
class IndexParams:
    leaf_size: int = 16
    checks: int = 128
    k: int = 2

    def __post_init__(self):
        if self.leaf_size < 1 or self.checks < 1 or self.k < 1:
            raise ValueError("leaf_size, checks and k must all be >= 1")


@dataclass
class QueryStats:
    """Per-query instrumentation, filled when passed to ``KdIndex.query``."""

    distance_evals: int = 0
    leaves_visited: int = 0


class _Leaf:
    __slots__ = ("mat", "imgs", "kps", "rows")

    def __init__(self, mat, imgs, kps, rows):
        self.mat = mat
        self.imgs = imgs
        self.kps = kps
        self.rows = rows


class _Node:
    __slots__ = ("dim", "threshold", "left", "right")

    def __init__(self, dim, threshold, left, right):
        self.dim = dim
        self.threshold = threshold
        self.left = left
        self.right = right


def records_from_signatures(signatures: Sequence[Signature]) -> list[DescriptorRecord]:
    """Flatten signatures into the pooled record list (image order preserved)."""
    out = []
    for i, sig in enumerate(signatures):
        for j, kp in enumerate(sig.keypoints):
            out.append(DescriptorRecord(vec=kp.descr, image_ref=i, kp_ref=j))
    return out


def _record_arrays(records: Sequence[DescriptorRecord]):
    n = len(records)
    vecs = np.zeros((n, DESCR_LEN), dtype=np.uint8)
    imgs = np.zeros(n, dtype=np.int64)
    kps = np.zeros(n, dtype=np.int64)
    for i, r in enumerate(records):
        vecs[i] = r.vec
        imgs[i] = r.image_ref
        kps[i] = r.kp_ref
    return vecs, imgs, kps


class KdIndex:
    """Immutable after build; concurrent read-only queries are safe."""

    def __init__(self, records: Sequence[DescriptorRecord], params: IndexParams):
        self.params = params
        self.vecs, self.image_refs, self.kp_refs = _record_arrays(records)
        self._mat = self.vecs.astype(np.int32)
        self.n_leaves = 0
        self.depth = 0
        counts: dict[int, int] = {}
        for img in self.image_refs.tolist():
            counts[img] = counts.get(img, 0) + 1
        self.image_counts = counts
        if len(records) == 0:
            self.root = None
        else:
            self.root = self._build(np.arange(len(records)), 1)

    def _build(self, rows: np.ndarray, depth: int):
        self.depth = max(self.depth, depth)
        if len(rows) <= self.params.leaf_size:
            self.n_leaves += 1
            return _Leaf(
                np.ascontiguousarray(self._mat[rows]),
                self.image_refs[rows],
                self.kp_refs[rows],
                rows,
            )
        sub = self._mat[rows]
        dim = int(np.argmax(sub.var(axis=0)))
        threshold = float(np.median(sub[:, dim]))
        mask = sub[:, dim] <= threshold
        if mask.all():
            # All values on the split dim tie with the median: fall back to a
            # midpoint split in stored order so recursion always terminates.
            mid = len(rows) // 2
            left_rows, right_rows = rows[:mid], rows[mid:]
        else:
            left_rows, right_rows = rows[mask], rows[~mask]
        return _Node(
            dim,
            threshold,
            self._build(left_rows, depth + 1),
            self._build(right_rows, depth + 1),
        )

    def __len__(self) -> int:
        return len(self.vecs)

    def record(self, row: int) -> DescriptorRecord:
        return DescriptorRecord(
            vec=self.vecs[row],
            image_ref=int(self.image_refs[row]),
            kp_ref=int(self.kp_refs[row]),
        )

    def query(
        self,
        q: np.ndarray,
        k: int,
        exclude_image: Optional[int] = None,
        checks: Optional[int] = None,
        stats: Optional[QueryStats] = None,
    ) -> list[tuple[DescriptorRecord, int]]:
        """k nearest stored descriptors by squared L2, ascending.

        Best-bin-first: a priority queue orders unexplored branches by an
        axis-distance lower bound; the search stops after ``checks`` leaf
        visits or queue exhaustion. Records owned by ``exclude_image`` are
        skipped before ranking. Ties break on (image_ref, kp_ref).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.root is None:
            return []
        budget = self.params.checks if checks is None else checks
        q32 = np.asarray(q, dtype=np.int32)

        heap: list[tuple[float, int, object]] = [(0.0, 0, self.root)]
        tick = 1
        cands: list[tuple[int, int, int, int]] = []
        leaves = 0
        while heap and leaves < budget:
            bound, _, node = heapq.heappop(heap)
            while isinstance(node, _Node):
                diff = float(q32[node.dim]) - node.threshold
                if diff <= 0:
                    near, far = node.left, node.right
                else:
                    near, far = node.right, node.left
                heapq.heappush(heap, (bound + diff * diff, tick, far))
                tick += 1
                node = near
            leaves += 1
            mat, imgs, kps, rows = node.mat, node.imgs, node.kps, node.rows
            if exclude_image is not None:
                keep = imgs != exclude_image
                if not keep.all():
                    mat, imgs, kps, rows = mat[keep], imgs[keep], kps[keep], rows[keep]
            if len(rows) == 0:
                continue
            diffs = mat - q32[None, :]
            dists = (diffs * diffs).sum(axis=1, dtype=np.int64)
            if stats is not None:
                stats.distance_evals += len(rows)
            cands.extend(
                zip(dists.tolist(), imgs.tolist(), kps.tolist(), rows.tolist())
            )
        if stats is not None:
            stats.leaves_visited = leaves
        cands.sort(key=lambda t: (t[0], t[1], t[2]))
        return [(self.record(row), dist) for dist, _, _, row in cands[:k]]


def build(records: Sequence[DescriptorRecord], p: IndexParams | None = None) -> KdIndex:
    """Single KD-tree: max-variance split dimension, median threshold.

    Deterministic for a fixed record order; an empty record list yields a
    valid empty index.
    """
    return KdIndex(records, p if p is not None else IndexParams())


def brute_force_query(
    records: Sequence[DescriptorRecord],
    q: np.ndarray,
    k: int,
    exclude_image: Optional[int] = None,
) -> list[tuple[DescriptorRecord, int]]:
    """Exact linear-scan oracle; ties break on (image_ref, kp_ref) ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(records) == 0:
        return []
    vecs, imgs, kps = _record_arrays(records)
    keep = np.ones(len(records), dtype=bool)
    if exclude_image is not None:
        keep = imgs != exclude_image
    rows = np.nonzero(keep)[0]
    if len(rows) == 0:
        return []
    diffs = vecs[rows].astype(np.int32) - np.asarray(q, dtype=np.int32)[None, :]
    dists = (diffs * diffs).sum(axis=1, dtype=np.int64)
    order = np.lexsort((kps[rows], imgs[rows], dists))
    out = []
    for i in order[:k]:
        row = rows[i]
        out.append(
            (
                DescriptorRecord(
                    vec=vecs[row], image_ref=int(imgs[row]), kp_ref=int(kps[row])
                ),
                int(dists[i]),
            )
        )
    return out
