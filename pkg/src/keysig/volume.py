"""Volume loading, normalization, and deterministic synthetic volumes.

A :class:`Volume` is a 3D scalar grid indexed ``data[x, y, z]``. On disk the
voxel stream is x-fastest, which maps to Fortran ravel order for this
indexing convention. Two file formats are supported:

* a minimal single-file NIfTI-1 subset (``.nii`` / ``.nii.gz``), honoring
  ``dim``, ``datatype``, ``pixdim``, ``vox_offset`` and ``scl_slope`` /
  ``scl_inter``; orientation matrices are ignored,
* raw little-endian binary next to a JSON sidecar declaring
  ``{"dims": [x, y, z], "spacing": [sx, sy, sz], "dtype": "..."}``.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (
    SidecarMissingError,
    VolumeCorruptError,
    VolumeFormatError,
)

SUPPORTED_DTYPES = {
    "uint8": np.uint8,
    "int16": np.int16,
    "uint16": np.uint16,
    "float32": np.float32,
}

# NIfTI-1 datatype codes for the supported subset, plus names for the
# common unsupported ones so errors can say what was encountered.
_NIFTI_DTYPES = {2: "uint8", 4: "int16", 16: "float32", 512: "uint16"}
_NIFTI_DTYPE_NAMES = {
    1: "bool",
    8: "int32",
    32: "complex64",
    64: "float64",
    128: "rgb24",
    256: "int8",
    768: "uint32",
    1024: "int64",
    1280: "uint64",
}


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar grid with physical spacing.

    ``data`` has shape ``dims`` and is indexed ``[x, y, z]``; it is marked
    read-only so instances can be shared across threads. ``voxel_bytes``
    remembers the on-disk bytes per voxel of the source file (compactness
    reporting); synthetic volumes default to 4.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray
    id: str = ""
    voxel_bytes: int = 4

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        data = np.asarray(self.data)
        if data.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(
                f"data has {data.size} values, dims {dims} require "
                f"{dims[0] * dims[1] * dims[2]}"
            )
        data = data.reshape(dims)
        data.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", data)


def _volume_paths(path: Path) -> tuple[Path, Path]:
    """Return (data path, sidecar path) for a raw volume."""
    return path, path.with_suffix(".json")


def load_volume(path: str | Path) -> Volume:
    """Load a volume from ``.nii``, ``.nii.gz``, or raw binary + JSON sidecar.

    Intensities are converted to float32; ``id`` defaults to the file stem.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    name = path.name.lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return _load_nifti(path)
    return _load_raw(path)


def _file_stem(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii", ".raw"):
        if name.lower().endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def _load_nifti(path: Path) -> Volume:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 348:
        raise VolumeCorruptError(f"{path}: file shorter than a NIfTI-1 header")

    # sizeof_hdr doubles as the endianness probe.
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr == 348:
        end = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == 348:
        end = ">"
    else:
        raise VolumeFormatError(f"{path}: not a NIfTI-1 file (sizeof_hdr != 348)")

    magic = raw[344:348]
    if magic[:3] not in (b"n+1", b"ni1"):
        raise VolumeFormatError(f"{path}: bad NIfTI magic {magic!r}")
    if magic[:3] == b"ni1":
        raise VolumeFormatError(f"{path}: two-file NIfTI (.hdr/.img) is not supported")

    dim = struct.unpack_from(end + "8h", raw, 40)
    datatype, bitpix = struct.unpack_from(end + "2h", raw, 70)
    pixdim = struct.unpack_from(end + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(end + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(end + "2f", raw, 112)

    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise VolumeFormatError(f"{path}: dim[0]={ndim} outside 3..7")
    if any(dim[i] > 1 for i in range(4, ndim + 1)):
        raise VolumeFormatError(f"{path}: multi-frame volumes not supported (dim={dim})")
    dims = (int(dim[1]), int(dim[2]), int(dim[3]))
    if any(d <= 0 for d in dims):
        raise VolumeCorruptError(f"{path}: non-positive spatial dim in {dims}")

    if datatype not in _NIFTI_DTYPES:
        name = _NIFTI_DTYPE_NAMES.get(datatype, f"code {datatype}")
        raise VolumeFormatError(f"{path}: unsupported NIfTI datatype {name}")
    np_dtype = np.dtype(SUPPORTED_DTYPES[_NIFTI_DTYPES[datatype]]).newbyteorder(end)
    if bitpix not in (0, np_dtype.itemsize * 8):
        raise VolumeCorruptError(
            f"{path}: bitpix {bitpix} disagrees with datatype {_NIFTI_DTYPES[datatype]}"
        )

    offset = int(vox_offset) if vox_offset >= 348 else 352
    count = dims[0] * dims[1] * dims[2]
    payload = raw[offset:]
    if len(payload) < count * np_dtype.itemsize:
        raise VolumeCorruptError(
            f"{path}: data section holds {len(payload)} bytes, header requires "
            f"{count * np_dtype.itemsize}"
        )
    data = np.frombuffer(payload, dtype=np_dtype, count=count).astype(np.float32)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        data = data * np.float32(scl_slope) + np.float32(scl_inter)
    data = data.reshape(dims, order="F")

    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])
    return Volume(
        dims=dims,
        spacing=spacing,
        data=data,
        id=_file_stem(path),
        voxel_bytes=np.dtype(SUPPORTED_DTYPES[_NIFTI_DTYPES[datatype]]).itemsize,
    )


def _load_raw(path: Path) -> Volume:
    data_path, sidecar_path = _volume_paths(path)
    if not sidecar_path.exists():
        raise SidecarMissingError(
            f"{path}: raw volume requires a JSON sidecar at {sidecar_path}"
        )
    try:
        meta = json.loads(sidecar_path.read_text())
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta.get("spacing", (1.0, 1.0, 1.0)))
        dtype_name = str(meta["dtype"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise VolumeFormatError(f"{sidecar_path}: invalid sidecar ({exc})") from exc
    if dtype_name not in SUPPORTED_DTYPES:
        raise VolumeFormatError(f"{sidecar_path}: unsupported dtype {dtype_name}")

    np_dtype = np.dtype(SUPPORTED_DTYPES[dtype_name]).newbyteorder("<")
    payload = data_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * np_dtype.itemsize
    if len(payload) != expected:
        raise VolumeCorruptError(
            f"{path}: {len(payload)} bytes on disk, sidecar dims {dims} require {expected}"
        )
    data = np.frombuffer(payload, dtype=np_dtype).astype(np.float32)
    data = data.reshape(dims, order="F")
    return Volume(
        dims=dims,
        spacing=spacing,
        data=data,
        id=_file_stem(path),
        voxel_bytes=np_dtype.itemsize,
    )


def save_raw(v: Volume, path: str | Path, dtype: str = "float32") -> Path:
    """Write a raw little-endian volume plus sidecar; returns the data path."""
    if dtype not in SUPPORTED_DTYPES:
        raise VolumeFormatError(f"unsupported dtype {dtype}")
    path = Path(path)
    np_dtype = np.dtype(SUPPORTED_DTYPES[dtype]).newbyteorder("<")
    payload = np.asarray(v.data, order="F").astype(np_dtype).tobytes(order="F")
    path.write_bytes(payload)
    sidecar = {"dims": list(v.dims), "spacing": list(v.spacing), "dtype": dtype}
    _volume_paths(path)[1].write_text(json.dumps(sidecar))
    return path


def save_nifti(v: Volume, path: str | Path, dtype: str = "float32") -> Path:
    """Write a minimal single-file little-endian NIfTI-1 volume."""
    if dtype not in SUPPORTED_DTYPES:
        raise VolumeFormatError(f"unsupported dtype {dtype}")
    path = Path(path)
    np_dtype = np.dtype(SUPPORTED_DTYPES[dtype]).newbyteorder("<")
    code = {v_: k for k, v_ in _NIFTI_DTYPES.items()}[dtype]

    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 3, *v.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, code, np_dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, 352.0)
    struct.pack_into("<2f", header, 112, 1.0, 0.0)
    header[344:348] = b"n+1\0"

    payload = np.asarray(v.data, order="F").astype(np_dtype).tobytes(order="F")
    body = bytes(header) + b"\0\0\0\0" + payload
    if path.name.lower().endswith(".gz"):
        path.write_bytes(gzip.compress(body, mtime=0))
    else:
        path.write_bytes(body)
    return path


def normalize(v: Volume) -> Volume:
    """Affine rescale of intensities to [0, 1]; constant volumes map to zeros."""
    data = v.data.astype(np.float32)
    lo = float(data.min())
    hi = float(data.max())
    if hi > lo:
        out = (data - np.float32(lo)) / np.float32(hi - lo)
    else:
        out = np.zeros_like(data)
    return Volume(
        dims=v.dims, spacing=v.spacing, data=out, id=v.id, voxel_bytes=v.voxel_bytes
    )


def synth_blobs(
    seed: int,
    dims: Sequence[int],
    blobs: Sequence[tuple[Sequence[float], float, float]],
    background: float = 0.0,
    background_sigma: float = 6.0,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    id: str | None = None,
) -> Volume:
    """Deterministic synthetic volume: Gaussian bumps plus smooth background.

    ``blobs`` is a list of ``(center, sigma, amplitude)``. When ``background``
    is nonzero a seed-derived smooth pseudo-random texture scaled to
    ``[0, background]`` is added. Bit-reproducible for fixed arguments.
    """
    dims = tuple(int(d) for d in dims)
    if any(d < 8 for d in dims):
        raise ValueError(f"dims must be >= 8 per axis, got {dims}")
    acc = np.zeros(dims, dtype=np.float64)
    xs = np.arange(dims[0], dtype=np.float64)[:, None, None]
    ys = np.arange(dims[1], dtype=np.float64)[None, :, None]
    zs = np.arange(dims[2], dtype=np.float64)[None, None, :]
    for center, sigma, amplitude in blobs:
        sigma = float(sigma)
        if sigma <= 0:
            raise ValueError("blob sigma must be > 0")
        cx, cy, cz = (float(c) for c in center)
        r2 = (xs - cx) ** 2 + (ys - cy) ** 2 + (zs - cz) ** 2
        acc += float(amplitude) * np.exp(-r2 / (2.0 * sigma * sigma))
    if background != 0.0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(dims)
        smooth = gaussian_filter(noise, sigma=background_sigma, mode="reflect")
        lo, hi = float(smooth.min()), float(smooth.max())
        if hi > lo:
            smooth = (smooth - lo) / (hi - lo)
        else:
            smooth = np.zeros(dims)
        acc += float(background) * smooth
    return Volume(
        dims=dims,
        spacing=tuple(float(s) for s in spacing),
        data=acc.astype(np.float32),
        id=id if id is not None else f"synth-{seed}",
    )


def gaussian_noise(v: Volume, sigma: float, seed: int) -> Volume:
    """Add seeded Gaussian intensity noise (for test/demo image repeats)."""
    rng = np.random.default_rng(seed)
    noisy = v.data.astype(np.float64) + sigma * rng.standard_normal(v.dims)
    return Volume(
        dims=v.dims,
        spacing=v.spacing,
        data=noisy.astype(np.float32),
        id=v.id,
        voxel_bytes=v.voxel_bytes,
    )


def gamma_remap(v: Volume, gamma: float) -> Volume:
    """Monotone intensity remap x -> x**gamma for volumes on [0, 1]."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    data = np.clip(v.data.astype(np.float64), 0.0, None) ** float(gamma)
    return Volume(
        dims=v.dims,
        spacing=v.spacing,
        data=data.astype(np.float32),
        id=v.id,
        voxel_bytes=v.voxel_bytes,
    )
