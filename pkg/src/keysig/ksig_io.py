"""Binary signature files (.ksig).

Fixed little-endian layout: magic ``KSIG``, version u32, image id and
subject id as u16-length-prefixed UTF-8, source dims 3xu32, source voxel
bytes u32, keypoint count u32, then 108 bytes per keypoint: position 3xf32,
sigma f32, the first two frame rows 6xf32, DoG value f32, and the 64-byte
rank descriptor. The third frame row is redundant (cross product of the
first two) and is reconstructed on read, which keeps the file at roughly 1%
of a 256^3 int16 volume at typical keypoint counts.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .descriptor import DESCR_LEN, Keypoint, Signature, third_row
from .errors import KsigFormatError

MAGIC = b"KSIG"
VERSION = 1

_KP_DTYPE = np.dtype(
    [
        ("pos", "<f4", 3),
        ("sigma", "<f4"),
        ("frame", "<f4", (2, 3)),
        ("dog_value", "<f4"),
        ("descr", "u1", DESCR_LEN),
    ]
)
KEYPOINT_BYTES = _KP_DTYPE.itemsize


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("identifier longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def write_signature(sig: Signature, path: str | Path) -> Path:
    path = Path(path)
    kps = np.zeros(len(sig.keypoints), dtype=_KP_DTYPE)
    for i, kp in enumerate(sig.keypoints):
        kps[i]["pos"] = kp.pos
        kps[i]["sigma"] = kp.sigma
        kps[i]["frame"] = kp.frame[:2]
        kps[i]["dog_value"] = kp.dog_value
        kps[i]["descr"] = kp.descr
    header = (
        MAGIC
        + struct.pack("<I", VERSION)
        + _pack_str(sig.image_id)
        + _pack_str(sig.subject_id)
        + struct.pack("<3I", *sig.source_dims)
        + struct.pack("<I", sig.source_voxel_bytes)
        + struct.pack("<I", len(sig.keypoints))
    )
    path.write_bytes(header + kps.tobytes())
    return path


def _read_str(buf: bytes, off: int) -> tuple[str, int]:
    if off + 2 > len(buf):
        raise KsigFormatError("truncated identifier length")
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    if off + n > len(buf):
        raise KsigFormatError("truncated identifier")
    return buf[off : off + n].decode("utf-8"), off + n


def read_signature(path: str | Path) -> Signature:
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise KsigFormatError(f"{path}: not a .ksig file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise KsigFormatError(f"{path}: unsupported .ksig version {version}")
    image_id, off = _read_str(buf, 8)
    subject_id, off = _read_str(buf, off)
    if off + 16 > len(buf):
        raise KsigFormatError(f"{path}: truncated header")
    dims = struct.unpack_from("<3I", buf, off)
    (voxel_bytes,) = struct.unpack_from("<I", buf, off + 12)
    (count,) = struct.unpack_from("<I", buf, off + 16)
    off += 20
    expected = count * KEYPOINT_BYTES
    if len(buf) - off != expected:
        raise KsigFormatError(
            f"{path}: {len(buf) - off} payload bytes, {count} keypoints need {expected}"
        )
    table = np.frombuffer(buf, dtype=_KP_DTYPE, count=count, offset=off)

    keypoints = []
    for row in table:
        frame2 = np.asarray(row["frame"], dtype=np.float32)
        frame = np.vstack([frame2, third_row(frame2[0], frame2[1])])
        keypoints.append(
            Keypoint(
                pos=tuple(float(c) for c in row["pos"]),
                sigma=float(row["sigma"]),
                frame=frame,
                descr=np.array(row["descr"], dtype=np.uint8),
                dog_value=float(row["dog_value"]),
            )
        )
    return Signature(
        image_id=image_id,
        subject_id=subject_id,
        keypoints=keypoints,
        source_dims=tuple(int(d) for d in dims),
        source_voxel_bytes=int(voxel_bytes),
    )
