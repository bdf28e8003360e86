"""Shared expensive fixtures: the injected-error cohort run end to end
through the CLI, and a pool of descriptors from real detector output."""

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from keysig.cli import main
from keysig.descriptor import describe
from keysig.detector import detect
from keysig.knn import records_from_signatures
from keysig.ksig_io import read_signature
from keysig.report import load_report
from keysig.synthetic import CohortSpec, CohortTruth, generate_cohort
from keysig.volume import normalize, save_raw, synth_blobs


@dataclass
class CohortRun:
    root: Path
    truth: CohortTruth
    report_path: Path       # scored (version 1)
    curated_path: Path      # flagged (version 2)
    image_ids: list[str]
    pipeline_seconds: float


@pytest.fixture(scope="session")
def cohort_run(tmp_path_factory) -> CohortRun:
    """50 subjects x 2 images, noise sigma 0.02 + gamma remap, 3 injected
    subject-ID errors; volumes written to disk and processed with the real
    CLI commands (detect -> score -> curate)."""
    root = tmp_path_factory.mktemp("cohort")
    spec = CohortSpec(subjects=50, images_per_subject=2, seed=7, inject=3)
    volumes, meta, truth = generate_cohort(spec)

    vol_dir = root / "volumes"
    vol_dir.mkdir()
    for v in volumes:
        save_raw(v, vol_dir / f"{v.id}.raw")
    meta_path = root / "metadata.csv"
    with open(meta_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_id", "subject_id", "database", "path"])
        for m, v in zip(meta, volumes):
            w.writerow([m.image_id, m.subject_id, m.database, str(vol_dir / f"{v.id}.raw")])

    sig_dir = root / "sigs"
    report_path = root / "report.json"
    curated_path = root / "curated.json"

    t0 = time.perf_counter()
    assert main(["detect", "--in", str(vol_dir), "--out", str(sig_dir)]) == 0
    assert main(
        [
            "score",
            "--sigs",
            str(sig_dir),
            "--metadata",
            str(meta_path),
            "--out",
            str(report_path),
        ]
    ) == 0
    assert main(
        ["curate", "--report", str(report_path), "--out", str(curated_path)]
    ) == 0
    elapsed = time.perf_counter() - t0

    return CohortRun(
        root=root,
        truth=truth,
        report_path=report_path,
        curated_path=curated_path,
        image_ids=[m.image_id for m in meta],
        pipeline_seconds=elapsed,
    )


@pytest.fixture(scope="session")
def cohort_signatures(cohort_run):
    sig_dir = cohort_run.root / "sigs"
    return [read_signature(p) for p in sorted(sig_dir.glob("*.ksig"))]


@pytest.fixture(scope="session")
def curated_report(cohort_run):
    return load_report(cohort_run.curated_path)


@pytest.fixture(scope="session")
def detector_pool():
    """2000 descriptors of real detector output over synthetic volumes."""
    sigs = []
    seed = 0
    while sum(len(s.keypoints) for s in sigs) < 2000:
        rng = np.random.default_rng((99, seed))
        n = 64
        blobs = [
            (
                [rng.uniform(12, n - 13) for _ in range(3)],
                rng.uniform(2.3, 3.4),
                rng.uniform(0.5, 1.0),
            )
            for _ in range(60)
        ]
        v = normalize(
            synth_blobs(
                seed=1000 + seed,
                dims=(n, n, n),
                blobs=blobs,
                background=0.8,
                background_sigma=2.0,
            )
        )
        sigs.append(describe(v, detect(v)))
        seed += 1
    return records_from_signatures(sigs)[:2000]
