"""Little-endian binary tensor blocks.

Layout: magic ``TNSR``, u32 version, u32 rank, ``rank`` x u64 extents, then the
float32 payload in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

TENSOR_MAGIC = b"TNSR"
TENSOR_VERSION = 1


class FormatError(ValueError):
    """Base class for malformed binary files."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class VersionError(FormatError):
    pass


def read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"expected {n} bytes, got {len(buf)}")
    return buf


def write_tensor(fh, arr) -> None:
    arr = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<II", TENSOR_VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def read_tensor(fh) -> np.ndarray:
    magic = read_exact(fh, 4)
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<II", read_exact(fh, 8))
    if version != TENSOR_VERSION:
        raise VersionError(f"unsupported tensor version {version}")
    shape = struct.unpack(f"<{rank}Q", read_exact(fh, 8 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(read_exact(fh, 4 * count), dtype="<f4")
    return data.reshape(shape).copy()
