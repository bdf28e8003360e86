"""Deterministic synthetic cohorts for demos and end-to-end tests.

Each image is blobs plus textures: a constellation of Gaussian blobs and a
smooth texture private to the subject (these make keypoints distinctive and
repeatable across a subject's images), plus a weak texture shared by the
whole cohort (so a few unrelated pairs still share matches, as real anatomy
does). Repeat images of a subject differ by seeded intensity noise and a
monotone gamma remap. Optional injected labeling errors reassign an image to
a fresh wrong subject id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .curation import ImageMeta
from .volume import Volume, gamma_remap, gaussian_noise, synth_blobs


@dataclass(frozen=True)
class CohortSpec:
    subjects: int = 50
    images_per_subject: int = 2
    size_range: tuple[int, int] = (60, 96)  # cubic edge, varies per subject
    seed: int = 7
    blobs_range: tuple[int, int] = (40, 230)
    subject_texture_weight: float = 1.0
    shared_texture_weight: float = 0.35
    texture_sigma: float = 2.0
    noise_sigma: float = 0.02
    gamma_range: tuple[float, float] = (0.9, 1.12)
    inject: int = 0
    database: str = "SYNTH"


@dataclass
class CohortTruth:
    """Ground truth of injected errors: image ids and broken same-subject pairs."""

    mislabeled_images: list[str] = field(default_factory=list)
    corrupted_pairs: list[tuple[str, str]] = field(default_factory=list)


def _smooth_texture(seed_key: tuple, dims, sigma: float) -> np.ndarray:
    """Seeded smooth pseudo-random texture scaled to [0, 1]."""
    rng = np.random.default_rng(seed_key)
    noise = rng.standard_normal(dims)
    smooth = gaussian_filter(noise, sigma=sigma, mode="reflect")
    lo, hi = float(smooth.min()), float(smooth.max())
    return (smooth - lo) / (hi - lo) if hi > lo else np.zeros(dims)


def _subject_dims(spec: CohortSpec, subject: int) -> tuple[int, int, int]:
    rng = np.random.default_rng((spec.seed, 4, subject))
    edge = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
    return (edge, edge, edge)


def _subject_blobs(spec: CohortSpec, subject: int, dims) -> list:
    rng = np.random.default_rng((spec.seed, 1, subject))
    lo = 10.0
    blobs = []
    n = int(rng.integers(spec.blobs_range[0], spec.blobs_range[1] + 1))
    for _ in range(n):
        center = [rng.uniform(lo, d - 1 - lo) for d in dims]
        sigma = rng.uniform(2.2, 3.4)
        amplitude = rng.uniform(0.4, 0.9)
        blobs.append((center, sigma, amplitude))
    return blobs


def generate_cohort(spec: CohortSpec) -> tuple[list[Volume], list[ImageMeta], CohortTruth]:
    """Volumes plus metadata rows (CSV order) and injection ground truth."""
    max_dims = (spec.size_range[1],) * 3
    shared_full = spec.shared_texture_weight * _smooth_texture(
        (spec.seed, 0), max_dims, spec.texture_sigma
    )
    volumes: list[Volume] = []
    meta: list[ImageMeta] = []
    for s in range(spec.subjects):
        dims = _subject_dims(spec, s)
        blob_vol = synth_blobs(
            seed=spec.seed, dims=dims, blobs=_subject_blobs(spec, s, dims)
        )
        tex = spec.subject_texture_weight * _smooth_texture(
            (spec.seed, 1000 + s), dims, spec.texture_sigma
        )
        shared = shared_full[: dims[0], : dims[1], : dims[2]]
        base = Volume(
            dims=dims,
            spacing=(1.0, 1.0, 1.0),
            data=(blob_vol.data.astype(np.float64) + tex + shared).astype(np.float32),
        )
        for r in range(spec.images_per_subject):
            rng = np.random.default_rng((spec.seed, 2, s, r))
            v = gaussian_noise(base, spec.noise_sigma, seed=int(rng.integers(2**31)))
            gamma = float(rng.uniform(*spec.gamma_range))
            v = gamma_remap(v, gamma)
            image_id = f"img-{s:03d}-{r}"
            volumes.append(
                Volume(dims=v.dims, spacing=v.spacing, data=v.data, id=image_id)
            )
            meta.append(
                ImageMeta(
                    image_id=image_id,
                    subject_id=f"sub-{s:03d}",
                    database=spec.database,
                )
            )

    truth = CohortTruth()
    if spec.inject > 0:
        if spec.images_per_subject < 2:
            raise ValueError("injection needs at least 2 images per subject")
        rng = np.random.default_rng((spec.seed, 3))
        victims = rng.choice(spec.subjects, size=spec.inject, replace=False)
        by_id = {m.image_id: i for i, m in enumerate(meta)}
        for n, s in enumerate(sorted(int(x) for x in victims)):
            keep_id = f"img-{s:03d}-0"
            wrong_id = f"img-{s:03d}-{spec.images_per_subject - 1}"
            i = by_id[wrong_id]
            meta[i] = ImageMeta(
                image_id=meta[i].image_id,
                subject_id=f"typo-{n:02d}",
                database=meta[i].database,
            )
            truth.mislabeled_images.append(wrong_id)
            truth.corrupted_pairs.append((keep_id, wrong_id))
    return volumes, meta, truth
