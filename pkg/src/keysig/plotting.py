"""Per-class distance distribution charts with flag dots (SVG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_CLASS_COLORS = {
    "SM": "#e377c2",
    "MZ": "#9467bd",
    "DZ": "#8c564b",
    "FS": "#2ca02c",
    "UR": "#1f77b4",
}


def _classes_in_order(report: dict) -> list[str]:
    """Classes with finite pairs, ordered by median distance ascending."""
    stats = report.get("class_stats", {})
    present = [
        (s["median"], label)
        for label, s in stats.items()
        if s.get("n_finite", 0) > 0 and s.get("median") is not None
    ]
    present.sort()
    return [label for _, label in present]


def render_report(report: dict):
    """One panel per class: distance histogram plus flagged pairs as dots."""
    classes = _classes_in_order(report)
    by_label: dict[str, list[float]] = {c: [] for c in classes}
    images = report["images"]
    for p in report["pairs"]:
        label = _pair_class(report, p)
        if label in by_label:
            by_label[label].append(p["distance"])

    n = max(len(classes), 1)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.0 * n), squeeze=False, sharex=True)
    fig.suptitle("Pairwise log-Jaccard distance by relationship label")
    all_d = [d for ds in by_label.values() for d in ds]
    rng = (min(all_d), max(all_d)) if all_d else (0.0, 1.0)

    for i, label in enumerate(classes or ["(no data)"]):
        ax = axes[i][0]
        ds = by_label.get(label, [])
        color = _CLASS_COLORS.get(label, "#7f7f7f")
        if ds:
            ax.hist(ds, bins=40, range=rng, color=color, alpha=0.7)
        flags = [f for f in report.get("flags", []) if f["label"] == label]
        for j, f in enumerate(flags):
            marker_y = ax.get_ylim()[1] * (0.25 + 0.1 * (j % 5))
            ax.plot(
                [f["distance"]],
                [marker_y],
                marker="o",
                markersize=6,
                color="#d62728" if f["direction"] == "too_dissimilar" else "#17becf",
                linestyle="none",
            )
        ax.set_ylabel(f"{label} (n={len(ds)})")
    axes[-1][0].set_xlabel("distance d = -ln J")
    fig.tight_layout()
    return fig


def _pair_class(report: dict, pair: dict) -> str:
    imgs = report["images"]
    a, b = imgs[pair["a"]], imgs[pair["b"]]
    if a["subject_id"] == b["subject_id"]:
        return "SM"
    if a["database"] != b["database"]:
        return "UR"
    key = tuple(sorted((a["subject_id"], b["subject_id"])))
    for rel in report.get("relations", []):
        if tuple(sorted((rel["subject_a"], rel["subject_b"]))) == key:
            return rel["label"]
    return "UR"


def save_svg(fig, path: str | Path) -> None:
    """Deterministic SVG output (fixed hash salt, no embedded date)."""
    with plt.rc_context({"svg.hashsalt": "keysig"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
