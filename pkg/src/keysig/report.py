"""The versioned JSON report and dataset metadata tables.

The report is self-contained: images, finite pair scores, the relation
table, per-class statistics, flags, and a config echo. Pairs absent from the
score list are implicitly at J = 0 (no evidence); they are reconstructed on
demand rather than stored, so re-curation needs no other inputs.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .curation import (
    ClassStats,
    Decision,
    Flag,
    ImageMeta,
    RelationshipLabel,
    RelationTable,
    apply_decisions,
    assign_labels,
    class_stats,
    flag_outliers,
    pair_label,
    relation_key,
)
from .errors import ConsistencyError, InputError
from .pairwise import PairKey, PairScore, no_evidence_score

REPORT_FORMAT = "keysig-report"


def total_pair_count(n_images: int) -> int:
    """Candidate pair count N(N-1)/2."""
    return n_images * (n_images - 1) // 2


def read_metadata_csv(path: str | Path) -> list[ImageMeta]:
    """Image table: image_id, subject_id, database, optional path column."""
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"image_id", "subject_id", "database"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InputError(
                f"{path}: metadata CSV needs columns image_id, subject_id, database"
            )
        for row in reader:
            rows.append(
                ImageMeta(
                    image_id=row["image_id"].strip(),
                    subject_id=row["subject_id"].strip(),
                    database=row["database"].strip(),
                    path=(row.get("path") or "").strip() or None,
                )
            )
    seen = set()
    for m in rows:
        if m.image_id in seen:
            raise InputError(f"{path}: duplicate image_id {m.image_id!r}")
        seen.add(m.image_id)
    return rows


def read_relations_csv(path: str | Path) -> RelationTable:
    """Twin/sibling table: subject_a, subject_b, label in {MZ, DZ, FS}."""
    table: RelationTable = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"subject_a", "subject_b", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InputError(
                f"{path}: relations CSV needs columns subject_a, subject_b, label"
            )
        for i, row in enumerate(reader, start=2):
            label = row["label"].strip().upper()
            if label not in ("MZ", "DZ", "FS"):
                raise InputError(
                    f"{path} line {i}: relation label must be MZ, DZ or FS, got {label!r}"
                )
            table[relation_key(row["subject_a"].strip(), row["subject_b"].strip())] = (
                RelationshipLabel(label)
            )
    return table


def _stats_to_json(stats: dict[RelationshipLabel, ClassStats]) -> dict:
    out = {}
    for label in sorted(stats, key=lambda l: l.value):
        s = stats[label]
        out[label.value] = {
            "n_finite": s.n_finite,
            "n_no_evidence": s.n_no_evidence,
            "median": s.median,
            "mad": s.mad,
            "quantiles": (
                {f"{lv:g}": q for lv, q in s.quantiles.items()}
                if s.quantiles is not None
                else None
            ),
        }
    return out


def _flags_to_json(flags: Sequence[Flag]) -> list[dict]:
    return [
        {
            "a": f.pair.a,
            "b": f.pair.b,
            "label": f.label.value,
            "distance": f.distance,
            "direction": f.direction.value,
            "severity": f.severity,
            "suggested": f.suggested.value,
        }
        for f in flags
    ]


def build_report(
    images: Sequence[ImageMeta],
    kp_counts: Sequence[int],
    scores: Sequence[PairScore],
    relations: Optional[RelationTable] = None,
    config: Optional[dict] = None,
) -> dict:
    """Version-1 report from a freshly scored dataset (stats, no flags)."""
    relations = relations or {}
    labeled = _full_labeled(images, kp_counts, scores, relations)
    stats = class_stats(labeled)
    finite = [s for s in scores if s.finite]
    return {
        "format": REPORT_FORMAT,
        "report_version": 1,
        "pipeline_version": __version__,
        "config": config or {},
        "images": [
            {
                "image_id": m.image_id,
                "subject_id": m.subject_id,
                "database": m.database,
                "keypoints": int(k),
            }
            for m, k in zip(images, kp_counts)
        ],
        "relations": [
            {"subject_a": a, "subject_b": b, "label": lbl.value}
            for (a, b), lbl in sorted(relations.items())
        ],
        "total_pairs": total_pair_count(len(images)),
        "no_evidence_pairs": total_pair_count(len(images)) - len(finite),
        "pairs": [
            {
                "a": s.key.a,
                "b": s.key.b,
                "c_ab": s.c_ab,
                "c_ba": s.c_ba,
                "intersection": s.intersection,
                "union": s.union_,
                "jaccard": s.jaccard,
                "distance": s.distance,
            }
            for s in finite
        ],
        "class_stats": _stats_to_json(stats),
        "flags": [],
        "decisions_applied": 0,
    }


def _full_labeled(
    images: Sequence[ImageMeta],
    kp_counts: Sequence[int],
    scores: Sequence[PairScore],
    relations: RelationTable,
) -> list[tuple[PairScore, RelationshipLabel]]:
    """Explicit scores plus implicit no-evidence pairs, all labeled."""
    labeled = list(assign_labels(images, scores, relations))
    present = {s.key for s in scores}
    n = len(images)
    for a in range(n):
        for b in range(a + 1, n):
            key = PairKey(a, b)
            if key in present:
                continue
            score = no_evidence_score(key, kp_counts[a], kp_counts[b])
            labeled.append((score, pair_label(images[a], images[b], relations)))
    return labeled


def images_from_report(report: dict) -> tuple[list[ImageMeta], list[int]]:
    images = [
        ImageMeta(
            image_id=row["image_id"],
            subject_id=row["subject_id"],
            database=row["database"],
        )
        for row in report["images"]
    ]
    return images, [int(row["keypoints"]) for row in report["images"]]


def relations_from_report(report: dict) -> RelationTable:
    return {
        relation_key(row["subject_a"], row["subject_b"]): RelationshipLabel(
            row["label"]
        )
        for row in report.get("relations", [])
    }


def scores_from_report(report: dict) -> list[PairScore]:
    return [
        PairScore(
            key=PairKey(int(row["a"]), int(row["b"])),
            c_ab=int(row["c_ab"]),
            c_ba=int(row["c_ba"]),
            intersection=float(row["intersection"]),
            union_=float(row["union"]),
            jaccard=float(row["jaccard"]),
            distance=float(row["distance"]),
        )
        for row in report["pairs"]
    ]


def labeled_from_report(report: dict) -> list[tuple[PairScore, RelationshipLabel]]:
    images, kp_counts = images_from_report(report)
    return _full_labeled(
        images, kp_counts, scores_from_report(report), relations_from_report(report)
    )


def curate_report(
    report: dict,
    decisions: Sequence[Decision] = (),
    z_threshold: Optional[float] = None,
    min_class_size: Optional[int] = None,
) -> dict:
    """Apply decisions, recompute stats and flags, bump the report version.

    Pair scores are reused as stored: labels do not alter descriptor
    geometry, so distances never need recomputation.
    """
    images, _ = images_from_report(report)
    relations = relations_from_report(report)
    labeled = labeled_from_report(report)
    audit: list[dict] = []
    decided: set[PairKey] = set()
    if decisions:
        labeled, audit = apply_decisions(labeled, decisions, images, relations)
        from .curation import Verdict, active_decisions

        decided = {
            key
            for key, d in active_decisions(decisions).items()
            if d.verdict in (Verdict.SAME, Verdict.DIFFERENT)
        }

    config = dict(report.get("config", {}))
    if z_threshold is None:
        z_threshold = float(config.get("z_threshold", 5.0))
    if min_class_size is None:
        min_class_size = int(config.get("min_class_size", 20))
    config["z_threshold"] = z_threshold
    config["min_class_size"] = min_class_size

    stats = class_stats(labeled)
    flags = flag_outliers(
        labeled,
        stats,
        z_threshold=z_threshold,
        min_class_size=min_class_size,
        decided=decided,
    )

    new = dict(report)
    new["report_version"] = int(report["report_version"]) + 1
    new["config"] = config
    new["class_stats"] = _stats_to_json(stats)
    new["flags"] = _flags_to_json(flags)
    new["decisions_applied"] = len(
        {d.pair for d in decisions}
    )
    new["relabeled"] = audit
    return new


def serialize_report(report: dict) -> bytes:
    """Canonical byte form; deterministic for identical content."""
    return (
        json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
    ).encode("utf-8")


def write_report(report: dict, path: str | Path) -> None:
    """Atomic write (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(serialize_report(report))
    os.replace(tmp, path)


def load_report(path: str | Path) -> dict:
    try:
        report = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(report, dict) or report.get("format") != REPORT_FORMAT:
        raise InputError(f"{path}: not a {REPORT_FORMAT} document")
    return report
