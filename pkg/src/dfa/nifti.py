"""Minimal single-file NIfTI-1 reader and writer.

Only the subset the pipeline needs is supported: little-endian ``.nii``
files with float32 or uint8 data, three spatial dims and an optional
fourth component dim. The component semantics travel in the description
field as ``dfa:<tag>``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"
MAGIC_OFFSET = 344
DATATYPES = {16: np.dtype("<f4"), 2: np.dtype("u1")}
CODES = {"float32": 16, "uint8": 2}

_HDR = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p", "<f4", (3,)),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern", "<f4", (3,)),
        ("qoffset", "<f4", (3,)),
        ("srow", "<f4", (3, 4)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _HDR.itemsize == HEADER_SIZE


class NiftiError(ValueError):
    """Malformed or unsupported file."""


_TAG_RE = re.compile(r"^(scalar|tensor6|frame9|mask|vector3|sh:(\d+)|peaks:(\d+))$")


def tag_components(tag):
    """Component count implied by a semantics tag (1 for 3D volumes)."""
    m = _TAG_RE.match(tag or "")
    if not m:
        raise ValueError(f"unknown volume tag {tag!r}")
    if m.group(2) is not None:
        L = int(m.group(2))
        if L % 2:
            raise ValueError(f"SH order must be even in tag {tag!r}")
        return (L + 1) * (L + 2) // 2
    if m.group(3) is not None:
        return 4 * int(m.group(3))
    return {"scalar": 1, "mask": 1, "tensor6": 6, "frame9": 9, "vector3": 3}[tag]


@dataclass
class VolumeHeader:
    dims: tuple
    spacing: tuple
    datatype: str
    tag: str

    @property
    def components(self):
        return self.dims[3] if len(self.dims) > 3 else 1


def write_volume(path, data, tag, spacing=(1.0, 1.0, 1.0)):
    """Write ``data`` (X, Y, Z[, C]) with a semantics tag.

    Masks are stored as uint8, everything else as float32.
    """
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise ValueError("volume must be 3D or 4D")
    ncomp = data.shape[3] if data.ndim == 4 else 1
    expected = tag_components(tag)
    if ncomp != expected:
        raise ValueError(f"tag {tag!r} needs {expected} components, data has {ncomp}")
    dtype = "uint8" if tag == "mask" else "float32"
    arr = data.astype(DATATYPES[CODES[dtype]])
    hdr = np.zeros((), dtype=_HDR)
    hdr["sizeof_hdr"] = HEADER_SIZE
    dim = [data.ndim] + list(data.shape) + [1] * (7 - data.ndim)
    hdr["dim"] = dim
    hdr["datatype"] = CODES[dtype]
    hdr["bitpix"] = arr.dtype.itemsize * 8
    hdr["pixdim"] = [1.0] + [float(s) for s in spacing] + [1.0] * 4
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = f"dfa:{tag}".encode()
    hdr["sform_code"] = 1
    srow = np.zeros((3, 4), dtype=np.float32)
    srow[0, 0], srow[1, 1], srow[2, 2] = spacing
    hdr["srow"] = srow
    hdr["magic"] = MAGIC
    payload = arr.tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
        fh.write(payload)


def read_header(raw: bytes) -> tuple[VolumeHeader, int, np.dtype]:
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"truncated header: expected {HEADER_SIZE} bytes, got {len(raw)}")
    size = int.from_bytes(raw[:4], "little", signed=True)
    if size != HEADER_SIZE:
        if int.from_bytes(raw[:4], "big", signed=True) == HEADER_SIZE:
            raise NiftiError("big-endian NIfTI files are not supported (byte offset 0)")
        raise NiftiError(f"bad header size {size} at byte offset 0")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HDR)[0]
    if raw[MAGIC_OFFSET:MAGIC_OFFSET + 4] != MAGIC:
        raise NiftiError(f"bad magic {raw[MAGIC_OFFSET:MAGIC_OFFSET + 4]!r} at byte offset {MAGIC_OFFSET}")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise NiftiError(f"unsupported datatype code {code} (only float32 and uint8) at byte offset 70")
    ndim = int(hdr["dim"][0])
    if ndim not in (3, 4):
        raise NiftiError(f"unsupported dimensionality {ndim} at byte offset 40")
    dims = tuple(int(d) for d in hdr["dim"][1:ndim + 1])
    if min(dims) < 1:
        raise NiftiError(f"non-positive dimension {dims} at byte offset 42")
    spacing = tuple(float(s) for s in hdr["pixdim"][1:4])
    descrip = bytes(hdr["descrip"]).split(b"\x00")[0].decode("ascii", "replace")
    tag = descrip[4:] if descrip.startswith("dfa:") else ("scalar" if ndim == 3 else "")
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise NiftiError(f"bad vox_offset {offset} at byte offset 108")
    dtype = DATATYPES[code]
    return VolumeHeader(dims, spacing, "float32" if code == 16 else "uint8", tag), offset, dtype


def read_volume(path):
    """Return ``(header, data)``; data is float64 for float32 files."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    header, offset, dtype = read_header(raw)
    count = int(np.prod(header.dims))
    expected = offset + count * dtype.itemsize
    if len(raw) < expected:
        raise NiftiError(f"truncated data in {path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(header.dims, order="F")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HDR)[0]
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if dtype.kind == "f":
        data = data.astype(np.float64)
        if slope not in (0.0, 1.0) or inter != 0.0:
            data = data * slope + inter
    else:
        data = data.copy()
    return header, data
