"""Scale-invariant 3D keypoint detection.

Keypoints are extrema of a difference-of-Gaussians (DoG) pyramid, refined to
sub-voxel position and sub-level scale by one clamped Newton step, then
filtered by contrast and by an eigenvalue-ratio edge test on the 3x3 spatial
Hessian. Both maxima and minima are kept; ``dog_value`` carries the sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

from .volume import Volume

# An octave is only built while its grid is strictly larger than this on
# every axis; a 64-voxel axis therefore yields octaves at 64 and 32.
MIN_OCTAVE_EXTENT = 16


@dataclass(frozen=True)
class ScaleSpaceParams:
    """Detector configuration (voxel units, intensities on [0, 1])."""

    base_sigma: float = 1.6
    scales_per_octave: int = 3
    max_octaves: int | None = None
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0

    def __post_init__(self):
        if self.base_sigma <= 0:
            raise ValueError("base_sigma must be > 0")
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if self.edge_ratio <= 1:
            raise ValueError("edge_ratio must be > 1")


@dataclass(frozen=True)
class RawKeypoint:
    """Scale-space extremum in original-volume voxel coordinates."""

    pos: tuple[float, float, float]
    sigma: float
    dog_value: float


@dataclass
class DogOctave:
    octave: int
    step: int  # voxel stride of this grid in the original volume (2**octave)
    gaussians: list[np.ndarray]
    dogs: list[np.ndarray]
    sigmas: list[float]  # absolute sigma per Gaussian level, original voxel units


@dataclass
class DogPyramid:
    params: ScaleSpaceParams
    octaves: list[DogOctave] = field(default_factory=list)


def _blur(data: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return data
    radius = int(math.ceil(3.0 * sigma))
    return gaussian_filter(data, sigma=sigma, mode="reflect", radius=radius)


def gaussian_blur(v: Volume, sigma: float) -> Volume:
    """Separable Gaussian blur, sampled kernel of radius ceil(3*sigma),
    reflect padding. ``sigma = 0`` returns the input volume."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return v
    out = _blur(v.data.astype(np.float32), sigma)
    return Volume(
        dims=v.dims, spacing=v.spacing, data=out, id=v.id, voxel_bytes=v.voxel_bytes
    )


def build_dog_pyramid(v: Volume, p: ScaleSpaceParams) -> DogPyramid:
    """Gaussian/DoG pyramid with ``scales_per_octave + 3`` levels per octave.

    Relative sigmas are geometrically spaced by ``2**(1/scales_per_octave)``;
    each next octave starts from the level at relative sigma ``2*base_sigma``
    downsampled by keeping every second voxel. Volumes too small for one
    octave produce an empty pyramid.
    """
    s = p.scales_per_octave
    n_levels = s + 3
    k = 2.0 ** (1.0 / s)
    rel = [p.base_sigma * k**i for i in range(n_levels)]

    pyramid = DogPyramid(params=p)
    base = None
    octave = 0
    dims = v.dims
    while min(dims) > MIN_OCTAVE_EXTENT:
        if p.max_octaves is not None and octave >= p.max_octaves:
            break
        if base is None:
            base = _blur(v.data.astype(np.float32), rel[0])
        gaussians = [base]
        for i in range(1, n_levels):
            inc = math.sqrt(rel[i] ** 2 - rel[i - 1] ** 2)
            gaussians.append(_blur(gaussians[-1], inc))
        dogs = [gaussians[i + 1] - gaussians[i] for i in range(n_levels - 1)]
        step = 2**octave
        pyramid.octaves.append(
            DogOctave(
                octave=octave,
                step=step,
                gaussians=gaussians,
                dogs=dogs,
                sigmas=[r * step for r in rel],
            )
        )
        base = np.ascontiguousarray(gaussians[s][::2, ::2, ::2])
        dims = base.shape
        octave += 1
    return pyramid


def _refine(dogs: list[np.ndarray], j: int, x: int, y: int, z: int):
    """One clamped 4D Newton step at DoG level j, voxel (x, y, z).

    Returns (offset[4], refined_value). Components of the offset are clamped
    to [-0.5, 0.5]; a singular Hessian yields a zero step.
    """
    d0 = dogs[j - 1]
    d1 = dogs[j]
    d2 = dogs[j + 1]
    c = float(d1[x, y, z])

    g = np.array(
        [
            (d1[x + 1, y, z] - d1[x - 1, y, z]) / 2.0,
            (d1[x, y + 1, z] - d1[x, y - 1, z]) / 2.0,
            (d1[x, y, z + 1] - d1[x, y, z - 1]) / 2.0,
            (d2[x, y, z] - d0[x, y, z]) / 2.0,
        ],
        dtype=np.float64,
    )

    h = np.empty((4, 4), dtype=np.float64)
    h[0, 0] = d1[x + 1, y, z] - 2.0 * c + d1[x - 1, y, z]
    h[1, 1] = d1[x, y + 1, z] - 2.0 * c + d1[x, y - 1, z]
    h[2, 2] = d1[x, y, z + 1] - 2.0 * c + d1[x, y, z - 1]
    h[3, 3] = d2[x, y, z] - 2.0 * c + d0[x, y, z]
    h[0, 1] = h[1, 0] = (
        d1[x + 1, y + 1, z] - d1[x + 1, y - 1, z] - d1[x - 1, y + 1, z] + d1[x - 1, y - 1, z]
    ) / 4.0
    h[0, 2] = h[2, 0] = (
        d1[x + 1, y, z + 1] - d1[x + 1, y, z - 1] - d1[x - 1, y, z + 1] + d1[x - 1, y, z - 1]
    ) / 4.0
    h[1, 2] = h[2, 1] = (
        d1[x, y + 1, z + 1] - d1[x, y + 1, z - 1] - d1[x, y - 1, z + 1] + d1[x, y - 1, z - 1]
    ) / 4.0
    h[0, 3] = h[3, 0] = (
        d2[x + 1, y, z] - d2[x - 1, y, z] - d0[x + 1, y, z] + d0[x - 1, y, z]
    ) / 4.0
    h[1, 3] = h[3, 1] = (
        d2[x, y + 1, z] - d2[x, y - 1, z] - d0[x, y + 1, z] + d0[x, y - 1, z]
    ) / 4.0
    h[2, 3] = h[3, 2] = (
        d2[x, y, z + 1] - d2[x, y, z - 1] - d0[x, y, z + 1] + d0[x, y, z - 1]
    ) / 4.0

    try:
        offset = np.linalg.solve(h, -g)
    except np.linalg.LinAlgError:
        offset = np.zeros(4)
    offset = np.clip(offset, -0.5, 0.5)
    value = c + 0.5 * float(g @ offset)
    return offset, value, h[:3, :3]


def _edge_ok(h_spatial: np.ndarray, edge_ratio: float) -> bool:
    """Eigenvalue test: all same sign and |lmax|/|lmin| <= edge_ratio."""
    eig = np.linalg.eigvalsh(h_spatial)
    if eig[0] > 0 or eig[-1] < 0:  # strictly positive or strictly negative
        mags = np.abs(eig)
        return bool(mags.max() <= edge_ratio * mags.min())
    return False


def detect(v: Volume, p: ScaleSpaceParams | None = None) -> list[RawKeypoint]:
    """Detect DoG extrema in a [0, 1]-normalized volume.

    A candidate voxel must be a strict extremum over the 26 spatial neighbors
    of its own DoG level (ties reject) and weakly dominate all 27 neighbors
    in both adjacent levels. Output is sorted by descending ``|dog_value|``.
    """
    if p is None:
        p = ScaleSpaceParams()
    pyramid = build_dog_pyramid(v, p)
    s = p.scales_per_octave

    found: list[tuple[float, float, float, float, float, float]] = []
    for oct_ in pyramid.octaves:
        dogs = oct_.dogs
        nx, ny, nz = dogs[0].shape
        if min(nx, ny, nz) < 3:
            continue
        for j in range(1, len(dogs) - 1):
            d = dogs[j]
            up_max = maximum_filter(dogs[j + 1], size=3)
            dn_max = maximum_filter(dogs[j - 1], size=3)
            up_min = minimum_filter(dogs[j + 1], size=3)
            dn_min = minimum_filter(dogs[j - 1], size=3)
            own_max = maximum_filter(d, size=3)
            own_min = minimum_filter(d, size=3)

            cand = ((d == own_max) & (d >= up_max) & (d >= dn_max)) | (
                (d == own_min) & (d <= up_min) & (d <= dn_min)
            )
            cand[0, :, :] = cand[-1, :, :] = False
            cand[:, 0, :] = cand[:, -1, :] = False
            cand[:, :, 0] = cand[:, :, -1] = False

            for x, y, z in np.argwhere(cand):
                block = d[x - 1 : x + 2, y - 1 : y + 2, z - 1 : z + 2]
                center = block[1, 1, 1]
                others = np.delete(block.ravel(), 13)
                if not (np.all(center > others) or np.all(center < others)):
                    continue  # plateau or tie: reject for determinism
                offset, value, h_spatial = _refine(dogs, j, int(x), int(y), int(z))
                if abs(value) < p.contrast_threshold:
                    continue
                if not _edge_ok(h_spatial, p.edge_ratio):
                    continue
                px = (float(x) + offset[0]) * oct_.step
                py = (float(y) + offset[1]) * oct_.step
                pz = (float(z) + offset[2]) * oct_.step
                # DoG level j spans Gaussian levels j..j+1: attribute the
                # geometric mean, i.e. half a level above the lower one.
                sigma = p.base_sigma * 2.0 ** (oct_.octave + (j + offset[3] + 0.5) / s)
                found.append((px, py, pz, sigma, value, abs(value)))

    found.sort(key=lambda t: (-t[5], t[0], t[1], t[2], t[3]))
    return [
        RawKeypoint(pos=(px, py, pz), sigma=sig, dog_value=val)
        for px, py, pz, sig, val, _ in found
    ]
