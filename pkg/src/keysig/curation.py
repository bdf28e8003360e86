"""Label-conditional distance statistics, outlier flagging, and curator
decisions.

Pairs are labeled SM/MZ/DZ/FS/UR from subject ids, databases, and an optional
twin/sibling relation table. Per-class robust statistics (median, MAD,
quantiles) support directional flagging: same-subject pairs are suspicious
only when too dissimilar, all other classes only when too similar. A
duplicate-catch rule flags any non-SM pair whose distance falls at or below
the SM 99.9th percentile regardless of z-score. Curator decisions relabel
pairs and are replayed on re-curation; no-evidence (infinite-distance) pairs
contribute counts but are never flagged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConsistencyError, MalformedDecisionError, MetadataError
from .pairwise import PairKey, PairScore

MAD_TO_SIGMA = 1.4826  # MAD of a normal distribution -> standard deviation
QUANTILE_LEVELS = (0.001, 0.01, 0.25, 0.5, 0.75, 0.99, 0.999)
MIN_CLASS_SIZE = 20  # classes smaller than this are skipped for z-flagging


class RelationshipLabel(str, Enum):
    SM = "SM"  # same subject
    MZ = "MZ"  # monozygotic twins
    DZ = "DZ"  # dizygotic twins
    FS = "FS"  # full siblings
    UR = "UR"  # unrelated


class FlagDirection(str, Enum):
    TOO_SIMILAR = "too_similar"
    TOO_DISSIMILAR = "too_dissimilar"


class Suggestion(str, Enum):
    SAME_SUBJECT = "same_subject"
    DIFFERENT_SUBJECT = "different_subject"


class Verdict(str, Enum):
    SAME = "same"
    DIFFERENT = "different"
    UNSURE = "unsure"


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    subject_id: str
    database: str
    path: Optional[str] = None


RelationTable = dict[tuple[str, str], RelationshipLabel]


def relation_key(subject_a: str, subject_b: str) -> tuple[str, str]:
    return (subject_a, subject_b) if subject_a <= subject_b else (subject_b, subject_a)


@dataclass
class ClassStats:
    label: RelationshipLabel
    n_finite: int
    n_no_evidence: int
    median: Optional[float] = None
    mad: Optional[float] = None
    quantiles: Optional[dict[float, float]] = None


@dataclass(frozen=True)
class Flag:
    pair: PairKey
    label: RelationshipLabel
    distance: float
    direction: FlagDirection
    severity: float
    suggested: Suggestion


@dataclass(frozen=True)
class Decision:
    pair: PairKey
    verdict: Verdict
    curator: str
    timestamp: datetime


def assign_labels(
    images: Sequence[ImageMeta],
    scores: Sequence[PairScore],
    relations: Optional[RelationTable] = None,
) -> list[tuple[PairScore, RelationshipLabel]]:
    """Attach a relationship label to every pair score.

    Same subject id (within one database) is SM; a subject id shared across
    databases is a metadata error. Cross-database pairs are otherwise always
    UR; within a database the relation table may name MZ/DZ/FS.
    """
    relations = relations or {}
    labeled = []
    for score in scores:
        if score.key is None:
            raise ConsistencyError("pair score without a pair key")
        for idx in (score.key.a, score.key.b):
            if idx >= len(images):
                raise ConsistencyError(
                    f"pair references image index {idx} missing from metadata"
                )
        ma, mb = images[score.key.a], images[score.key.b]
        labeled.append((score, pair_label(ma, mb, relations)))
    return labeled


def pair_label(
    ma: ImageMeta, mb: ImageMeta, relations: RelationTable
) -> RelationshipLabel:
    if ma.subject_id == mb.subject_id:
        if ma.database != mb.database:
            raise MetadataError(
                f"subject id {ma.subject_id!r} appears in databases "
                f"{ma.database!r} and {mb.database!r}"
            )
        return RelationshipLabel.SM
    if ma.database != mb.database:
        return RelationshipLabel.UR
    return relations.get(
        relation_key(ma.subject_id, mb.subject_id), RelationshipLabel.UR
    )


def class_stats(
    labeled: Sequence[tuple[PairScore, RelationshipLabel]],
) -> dict[RelationshipLabel, ClassStats]:
    """Robust per-class statistics over finite distances only.

    Infinite (no-evidence) pairs are tallied in ``n_no_evidence``; an empty
    finite set leaves median/mad/quantiles absent. Quantiles interpolate the
    empirical CDF linearly.
    """
    by_label: dict[RelationshipLabel, list[float]] = {}
    no_evidence: dict[RelationshipLabel, int] = {}
    for score, label in labeled:
        if math.isfinite(score.distance):
            by_label.setdefault(label, []).append(score.distance)
        else:
            no_evidence[label] = no_evidence.get(label, 0) + 1

    out: dict[RelationshipLabel, ClassStats] = {}
    for label in set(by_label) | set(no_evidence):
        finite = by_label.get(label, [])
        stats = ClassStats(
            label=label,
            n_finite=len(finite),
            n_no_evidence=no_evidence.get(label, 0),
        )
        if finite:
            arr = np.asarray(finite, dtype=np.float64)
            med = float(np.median(arr))
            stats.median = med
            stats.mad = float(np.median(np.abs(arr - med)))
            qs = np.quantile(arr, QUANTILE_LEVELS, method="linear")
            stats.quantiles = {lv: float(q) for lv, q in zip(QUANTILE_LEVELS, qs)}
        out[label] = stats
    return out


def _robust_scale(stats: ClassStats) -> Optional[float]:
    """z denominator: 1.4826*MAD, else half the IQR, else None (skip class)."""
    if stats.mad is None or stats.quantiles is None:
        return None
    if stats.mad > 0:
        return MAD_TO_SIGMA * stats.mad
    half_iqr = (stats.quantiles[0.75] - stats.quantiles[0.25]) / 2.0
    return half_iqr if half_iqr > 0 else None


def flag_outliers(
    labeled: Sequence[tuple[PairScore, RelationshipLabel]],
    stats: dict[RelationshipLabel, ClassStats],
    z_threshold: float = 5.0,
    min_class_size: int = MIN_CLASS_SIZE,
    decided: Iterable[PairKey] = (),
) -> list[Flag]:
    """Directional robust-z flags plus the SM-quantile duplicate catch.

    SM pairs flag only on positive z (too dissimilar, suggested different
    subject); other classes only on negative z (too similar, suggested same
    subject). Any non-SM pair at or below the SM 99.9th percentile is flagged
    too-similar even without a z-score; such flags carry severity
    max(|z|, z_threshold). Pairs in ``decided`` were already adjudicated by a
    curator and are never re-flagged, which makes re-curation after deciding
    every flag reach a flag-free state. Output is sorted by severity
    descending, then key.
    """
    sm_stats = stats.get(RelationshipLabel.SM)
    sm_cut = None
    if sm_stats is not None and sm_stats.quantiles is not None:
        sm_cut = sm_stats.quantiles[0.999]

    decided = set(decided)
    flags = []
    for score, label in labeled:
        d = score.distance
        if not math.isfinite(d):
            continue  # absence of matches is the expected UR state
        if score.key in decided:
            continue  # an adjudicated pair is settled until its decision changes
        cls = stats.get(label)
        z = None
        if cls is not None and cls.n_finite >= min_class_size:
            scale = _robust_scale(cls)
            if scale is not None:
                z = (d - cls.median) / scale

        if label is RelationshipLabel.SM:
            if z is not None and z >= z_threshold:
                flags.append(
                    Flag(
                        pair=score.key,
                        label=label,
                        distance=d,
                        direction=FlagDirection.TOO_DISSIMILAR,
                        severity=abs(z),
                        suggested=Suggestion.DIFFERENT_SUBJECT,
                    )
                )
            continue

        z_hit = z is not None and z <= -z_threshold
        dup_hit = sm_cut is not None and d <= sm_cut
        if z_hit or dup_hit:
            severity = abs(z) if z_hit else max(abs(z) if z is not None else 0.0, z_threshold)
            flags.append(
                Flag(
                    pair=score.key,
                    label=label,
                    distance=d,
                    direction=FlagDirection.TOO_SIMILAR,
                    severity=severity,
                    suggested=Suggestion.SAME_SUBJECT,
                )
            )

    flags.sort(key=lambda f: (-f.severity, f.pair))
    return flags


class _UnionFind:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def active_decisions(decisions: Sequence[Decision]) -> dict[PairKey, Decision]:
    """Latest decision per pair wins (input order = log order)."""
    active: dict[PairKey, Decision] = {}
    for d in decisions:
        active[d.pair] = d
    return active


def apply_decisions(
    labeled: Sequence[tuple[PairScore, RelationshipLabel]],
    decisions: Sequence[Decision],
    images: Optional[Sequence[ImageMeta]] = None,
    relations: Optional[RelationTable] = None,
) -> tuple[list[tuple[PairScore, RelationshipLabel]], list[dict]]:
    """Relabel pairs per curator verdicts; returns (relabeled, audit log).

    ``same`` makes a pair SM and merges the two images into one identity
    group; the merge propagates transitively over confirmed-same pairs, so
    any pair joined through chains of confirmations also becomes SM.
    ``different`` forces a pair out of SM (to its relation-table label when
    one exists, else UR). ``unsure`` leaves the pair unchanged.
    """
    known = {score.key for score, _ in labeled}
    for d in decisions:
        if d.pair not in known:
            raise ConsistencyError(f"decision references unknown pair {d.pair}")
    active = active_decisions(decisions)

    uf = _UnionFind()
    for key, d in active.items():
        if d.verdict is Verdict.SAME:
            uf.union(key.a, key.b)

    relations = relations or {}
    subject_of = None
    if images is not None:
        subject_of = [m.subject_id for m in images]

    relabeled = []
    audit = []
    for score, label in labeled:
        key = score.key
        new = label
        reason = None
        d = active.get(key)
        if d is not None and d.verdict is Verdict.SAME:
            new = RelationshipLabel.SM
            reason = "decision:same"
        elif d is not None and d.verdict is Verdict.DIFFERENT:
            if label is RelationshipLabel.SM:
                new = RelationshipLabel.UR
                if subject_of is not None:
                    new = relations.get(
                        relation_key(subject_of[key.a], subject_of[key.b]),
                        RelationshipLabel.UR,
                    )
            reason = "decision:different"
        elif d is None and uf.find(key.a) == uf.find(key.b):
            new = RelationshipLabel.SM
            reason = "transitive:same"
        if new != label:
            audit.append(
                {
                    "pair": [key.a, key.b],
                    "old": label.value,
                    "new": new.value,
                    "reason": reason,
                    "curator": d.curator if d is not None else None,
                }
            )
        relabeled.append((score, new))
    return relabeled, audit


def decision_to_json(d: Decision) -> str:
    return json.dumps(
        {
            "pair": [d.pair.a, d.pair.b],
            "verdict": d.verdict.value,
            "curator": d.curator,
            "timestamp": d.timestamp.isoformat(),
        },
        sort_keys=True,
    )


def parse_decision_line(line: str, line_number: int) -> Decision:
    try:
        obj = json.loads(line)
        a, b = (int(x) for x in obj["pair"])
        verdict = Verdict(obj["verdict"])
        curator = str(obj.get("curator", ""))
        timestamp = datetime.fromisoformat(obj["timestamp"])
        return Decision(
            pair=PairKey.of(a, b), verdict=verdict, curator=curator, timestamp=timestamp
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise MalformedDecisionError(line_number, str(exc)) from exc


def load_decisions(path: str | Path) -> list[Decision]:
    """Parse an append-only decisions JSONL file (blank lines ignored)."""
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        out.append(parse_decision_line(line, i))
    return out


def append_decision(path: str | Path, d: Decision) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(decision_to_json(d) + "\n")


def make_decision(pair: PairKey, verdict: Verdict, curator: str) -> Decision:
    return Decision(
        pair=pair,
        verdict=verdict,
        curator=curator,
        timestamp=datetime.now(timezone.utc),
    )
