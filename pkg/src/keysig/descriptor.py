"""Orientation assignment and rank-ordered gradient descriptors.

Each raw keypoint receives a canonical right-handed frame derived from the
local gradient field, then a 64-element histogram: a cube of side 4*sigma is
partitioned into 2x2x2 spatial subregions and gradient magnitude is binned
into the 8 cube-diagonal orientation bins within each subregion. The final
descriptor is the rank transform of those 64 values, a permutation of 0..63,
which depends only on the ordering of the histogram entries.
"""

from __future__ import annotations
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .detector import RawKeypoint
from .errors import (
    DegenerateOrientationError,
    EmptySupportError,
    InternalInvariantError,
)
from .volume import Volume

DESCR_LEN = 64
_SAMPLES_PER_AXIS = 8  # 2 subregions x 4 samples, cube side 4*sigma
_IDENTITY_RANKS = np.arange(DESCR_LEN, dtype=np.uint8)


@dataclass(frozen=True)
class Keypoint:
    """Oriented keypoint with rank descriptor.

    ``frame`` rows are the local axes (right-handed, det +1); ``descr`` is a
    permutation of 0..63 stored as uint8. Float fields are float32-exact so
    signatures survive binary serialization bit-for-bit.
    """

    pos: tuple[float, float, float]
    sigma: float
    frame: np.ndarray
    descr: np.ndarray
    dog_value: float

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=np.float32)
        frame.flags.writeable = False
        descr = np.asarray(self.descr, dtype=np.uint8)
        descr.flags.writeable = False
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "descr", descr)


@dataclass
class Signature:
    """An image's keypoint set plus identity: the unit of comparison."""

    image_id: str
    subject_id: str
    keypoints: list[Keypoint] = field(default_factory=list)
    source_dims: tuple[int, int, int] = (0, 0, 0)
    source_voxel_bytes: int = 4

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be nonempty")


def rank_equalize(data: np.ndarray) -> np.ndarray:
    """Map intensities to their dense rank, scaled to [0, 1].

    Equal values share a rank, so constant regions stay flat. The result is
    bit-identical for ``v`` and ``g(v)`` for any strictly increasing ``g``:
    descriptors built from it depend only on the ordering of intensities.
    """
    values, inverse = np.unique(data, return_inverse=True)
    if len(values) <= 1:
        return np.zeros(data.shape, dtype=np.float32)
    eq = inverse.astype(np.float32) / np.float32(len(values) - 1)
    return eq.reshape(data.shape)


def gradient_field(v: Volume) -> np.ndarray:
    """Central-difference gradient of the rank-equalized intensities.

    Shape (nx, ny, nz, 3), float32. Working on ranks rather than raw values
    makes every downstream descriptor invariant to monotone intensity
    remaps.
    """
    gx, gy, gz = np.gradient(rank_equalize(v.data))
    return np.stack([gx, gy, gz], axis=-1)


def third_row(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Canonical float32 third frame row from the first two.

    The signature file stores only two rows; this reconstruction is used both
    when building frames and when reading them back, so round-trips are
    bit-exact.
    """
    e3 = np.cross(np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64))
    e3 /= np.linalg.norm(e3)
    return e3.astype(np.float32)


def _window_voxels(v: Volume, pos: np.ndarray, radius: float):
    """Integer voxels within Euclidean ``radius`` of pos, clipped to bounds."""
    lo = np.maximum(np.floor(pos - radius).astype(int), 0)
    hi = np.minimum(np.ceil(pos + radius).astype(int), np.array(v.dims) - 1)
    if np.any(lo > hi):
        return None
    xs = np.arange(lo[0], hi[0] + 1)
    ys = np.arange(lo[1], hi[1] + 1)
    zs = np.arange(lo[2], hi[2] + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    off = pts - pos[None, :]
    keep = (off**2).sum(axis=1) <= radius * radius
    if not np.any(keep):
        return None
    return pts[keep], off[keep]


def assign_orientation(
    v: Volume, k: RawKeypoint, grad: np.ndarray | None = None
) -> np.ndarray:
    """Canonical frame from the Gaussian-weighted local gradient field.

    Primary axis: weighted mean gradient direction. Secondary: principal
    direction of the weighted gradient second-moment matrix, made orthogonal
    to the primary, with its sign fixed by the weighted third moment. Third:
    cross product. Raises DegenerateOrientationError on flat regions.
    """
    if grad is None:
        grad = gradient_field(v)
    pos = np.asarray(k.pos, dtype=np.float64)
    win = _window_voxels(v, pos, 3.0 * k.sigma)
    if win is None:
        raise DegenerateOrientationError(
            f"keypoint at {k.pos} has no support inside the volume"
        )
    pts, off = win
    w = np.exp(-(off**2).sum(axis=1) / (2.0 * (1.5 * k.sigma) ** 2))
    g = grad[pts[:, 0], pts[:, 1], pts[:, 2]].astype(np.float64)

    total_mag = float((w * np.linalg.norm(g, axis=1)).sum())
    if total_mag < 1e-12:
        raise DegenerateOrientationError(f"zero gradient energy at {k.pos}")

    second = (w[:, None, None] * g[:, :, None] * g[:, None, :]).sum(axis=0)
    _, vecs = np.linalg.eigh(second)

    mean_g = (w[:, None] * g).sum(axis=0)
    norm = np.linalg.norm(mean_g)
    if norm > 1e-6 * total_mag:
        e1 = mean_g / norm
    else:
        # Symmetric pattern (e.g. an isotropic blob): the mean gradient
        # cancels although energy is present. Use the second-moment
        # principal direction, sign fixed by the third moment when it
        # discriminates, else toward the largest component.
        e1 = vecs[:, -1]
        t = float((w * ((g @ e1) ** 3)).sum())
        if t < 0:
            e1 = -e1
        elif t == 0 and e1[int(np.argmax(np.abs(e1)))] < 0:
            e1 = -e1

    principal = vecs[:, -1]
    r = principal - (principal @ e1) * e1
    rn = np.linalg.norm(r)
    if rn < 1e-8:
        # Gradient field is effectively 1D (e.g. a linear ramp): fall back to
        # the coordinate axis least aligned with the primary direction.
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(e1)))] = 1.0
        r = axis - (axis @ e1) * e1
        rn = np.linalg.norm(r)
        e2 = r / rn
    else:
        e2 = r / rn
        third_moment = float((w * ((g @ e2) ** 3)).sum())
        if third_moment < 0:
            e2 = -e2

    e1_32 = e1.astype(np.float32)
    e2_32 = e2.astype(np.float32)
    return np.stack([e1_32, e2_32, third_row(e1_32, e2_32)])


def _local_lattice(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample offsets in frame coordinates plus flat subregion index."""
    n = _SAMPLES_PER_AXIS
    cell = 4.0 * sigma / n
    centers = (np.arange(n) - (n - 1) / 2.0) * cell
    gx, gy, gz = np.meshgrid(centers, centers, centers, indexing="ij")
    local = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    idx = np.arange(n)
    sx, sy, sz = np.meshgrid(idx >= n // 2, idx >= n // 2, idx >= n // 2, indexing="ij")
    sub = (sx.ravel() * 4 + sy.ravel() * 2 + sz.ravel()).astype(np.intp)
    return local, sub


def compute_descriptor(
    v: Volume, k: RawKeypoint, frame: np.ndarray, grad: np.ndarray | None = None
) -> np.ndarray:
    """Raw 64-element histogram before rank transform (subregion-major).

    Gradients are sampled by trilinear interpolation on an 8x8x8 lattice over
    a cube of side 4*sigma rotated into the frame; each sample adds its
    gradient magnitude, weighted by a Gaussian of sigma 2*k.sigma on the
    local offset, to the nearest cube-diagonal orientation bin of its 2x2x2
    subregion. Samples outside the volume are dropped.
    """
    if grad is None:
        grad = gradient_field(v)
    frame = np.asarray(frame, dtype=np.float64)
    pos = np.asarray(k.pos, dtype=np.float64)
    local, sub = _local_lattice(k.sigma)
    world = pos[None, :] + local @ frame

    dims = np.asarray(v.dims)
    valid = np.all((world >= 0.0) & (world <= dims[None, :] - 1.0), axis=1)
    if not np.any(valid):
        raise EmptySupportError(f"descriptor window at {k.pos} has no valid samples")
    world_v = world[valid]
    coords = world_v.T
    g_world = np.stack(
        [map_coordinates(grad[..., a], coords, order=1) for a in range(3)], axis=1
    ).astype(np.float64)

    g_local = g_world @ frame.T
    bins = (
        (g_local[:, 0] >= 0).astype(np.intp) * 4
        + (g_local[:, 1] >= 0).astype(np.intp) * 2
        + (g_local[:, 2] >= 0).astype(np.intp)
    )
    mag = np.linalg.norm(g_world, axis=1)
    spatial_w = np.exp(
        -(local[valid] ** 2).sum(axis=1) / (2.0 * (2.0 * k.sigma) ** 2)
    )
    hist = np.zeros(DESCR_LEN, dtype=np.float64)
    np.add.at(hist, sub[valid] * 8 + bins, mag * spatial_w)
    return hist


def rank_transform(h: np.ndarray) -> np.ndarray:
    """Replace each histogram value by its ascending rank (0..63).

    Ties are broken stably: the lower index receives the lower rank, so the
    output is always a permutation of 0..63.
    """
    h = np.asarray(h)
    if h.shape != (DESCR_LEN,):
        raise ValueError(f"expected {DESCR_LEN} values, got shape {h.shape}")
    order = np.argsort(h, kind="stable")
    ranks = np.empty(DESCR_LEN, dtype=np.uint8)
    ranks[order] = _IDENTITY_RANKS
    return ranks


def _check_keypoint(kp: Keypoint) -> None:
    if not np.array_equal(np.sort(kp.descr), _IDENTITY_RANKS):
        raise InternalInvariantError("descriptor is not a permutation of 0..63")
    f = kp.frame.astype(np.float64)
    if not np.allclose(f @ f.T, np.eye(3), atol=1e-5):
        raise InternalInvariantError("keypoint frame is not orthonormal")
    if abs(np.linalg.det(f) - 1.0) > 1e-5:
        raise InternalInvariantError("keypoint frame is not right-handed")


def describe(
    v: Volume,
    raw: list[RawKeypoint],
    subject_id: str = "",
    source_voxel_bytes: int | None = None,
) -> Signature:
    """Full descriptor stage: orient, histogram, rank for each raw keypoint.

    Keypoints with degenerate orientation or empty support are silently
    dropped; the order of survivors is preserved.
    """
    grad = gradient_field(v)
    f32 = np.float32
    keypoints = []
    for rk in raw:
        try:
            frame = assign_orientation(v, rk, grad)
            hist = compute_descriptor(v, rk, frame, grad)
        except (DegenerateOrientationError, EmptySupportError):
            continue
        kp = Keypoint(
            pos=tuple(float(f32(c)) for c in rk.pos),
            sigma=float(f32(rk.sigma)),
            frame=frame,
            descr=rank_transform(hist),
            dog_value=float(f32(rk.dog_value)),
        )
        _check_keypoint(kp)
        keypoints.append(kp)
    return Signature(
        image_id=v.id or "unnamed",
        subject_id=subject_id,
        keypoints=keypoints,
        source_dims=v.dims,
        source_voxel_bytes=(
            v.voxel_bytes if source_voxel_bytes is None else source_voxel_bytes
        ),
    )
