"""Little-endian struct helpers shared by the grid, dataset and model file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Raised when a file has the wrong magic, version or a truncated payload."""


def write_struct(fh: BinaryIO, fmt: str, *values) -> None:
    fh.write(struct.pack("<" + fmt, *values))


def read_struct(fh: BinaryIO, fmt: str) -> tuple:
    size = struct.calcsize("<" + fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise FormatError(f"truncated file: wanted {size} bytes, got {len(raw)}")
    return struct.unpack("<" + fmt, raw)


def read_array(fh: BinaryIO, dtype: str, count: int) -> np.ndarray:
    dt = np.dtype(dtype).newbyteorder("<")
    raw = fh.read(dt.itemsize * count)
    if len(raw) != dt.itemsize * count:
        raise FormatError("truncated array payload")
    return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))


def write_array(fh: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    fh.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


def check_magic(fh: BinaryIO, magic: bytes, version: int) -> None:
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (ver,) = read_struct(fh, "I")
    if ver != version:
        raise FormatError(f"unsupported {magic.decode()} version {ver} (expected {version})")
