"""Binary containers: LDF1 float arrays and LDCK named-tensor checkpoints.

Both formats are little-endian and round-trip bit exactly.  LDF1 holds a
single H x W x C float32 array; LDCK holds an ordered set of named float32
or float64 arrays of arbitrary rank.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

LDF1_MAGIC = b"LDF1"
LDCK_MAGIC = b"LDCK"
LDCK_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Raised on a malformed or truncated container file."""


def write_ldf1(path: str | Path, array: np.ndarray) -> None:
    """Write an H x W or H x W x C array as float32 LDF1."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"LDF1 stores rank-2/3 arrays, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(LDF1_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_ldf1(path: str | Path) -> np.ndarray:
    """Read an LDF1 file back as an H x W x C float32 array."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != LDF1_MAGIC:
            raise FormatError(f"bad LDF1 magic {magic!r} in {path}")
        h, w, c = struct.unpack("<III", f.read(12))
        data = f.read(h * w * c * 4)
    if len(data) != h * w * c * 4:
        raise FormatError(f"truncated LDF1 file {path}")
    return np.frombuffer(data, dtype="<f4").reshape(h, w, c).copy()


def write_ldck(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays in insertion order.

    Every value must be float32 or float64; other dtypes are rejected so
    checkpoints stay portable.
    """
    with open(path, "wb") as f:
        f.write(LDCK_MAGIC)
        f.write(struct.pack("<II", LDCK_VERSION, len(entries)))
        for name, value in entries.items():
            arr = np.asarray(value)
            if arr.dtype == np.float32:
                arr = arr.astype("<f4", copy=False)
            elif arr.dtype == np.float64:
                arr = arr.astype("<f8", copy=False)
            else:
                raise FormatError(
                    f"entry {name!r} has dtype {arr.dtype}; only f32/f64 supported"
                )
            code = _DTYPE_CODES[arr.dtype.newbyteorder("<")]
            name_bytes = name.encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise FormatError(f"entry name too long: {name!r}")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def read_ldck(path: str | Path) -> dict[str, np.ndarray]:
    """Read an LDCK checkpoint, preserving entry order."""
    entries: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != LDCK_MAGIC:
            raise FormatError(f"bad LDCK magic {magic!r} in {path}")
        version, count = struct.unpack("<II", f.read(8))
        if version != LDCK_VERSION:
            raise FormatError(f"unsupported LDCK version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            code, rank = struct.unpack("<BB", f.read(2))
            if code not in _CODE_DTYPES:
                raise FormatError(f"unknown dtype code {code} for entry {name!r}")
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            dtype = _CODE_DTYPES[code]
            count_elems = int(np.prod(dims, dtype=np.int64)) if rank else 1
            n_bytes = count_elems * dtype.itemsize
            data = f.read(n_bytes)
            if len(data) != n_bytes:
                raise FormatError(f"truncated LDCK entry {name!r} in {path}")
            entries[name] = np.frombuffer(data, dtype=dtype).reshape(dims).copy()
    return entries
