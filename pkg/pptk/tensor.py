from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ._types import FloatArray
from .errors import TensorFormatError

__all__ = ("MAGIC", "encode_tensor", "decode_tensor", "save_tensor", "load_tensor")

log = logging.getLogger(__name__)

MAGIC = b"PPTK"
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def encode_tensor(array: np.ndarray) -> bytes:
    """``PPTK``, u32 rank, u32 extents, then the row-major f32 payload; all little-endian."""

    array = np.ascontiguousarray(array, dtype=_F32)
    header = np.array([array.ndim, *array.shape], dtype=_U32).tobytes()
    return MAGIC + header + array.tobytes()


def decode_tensor(data: bytes, *, path: str = "<bytes>") -> FloatArray:
    if len(data) < 8:
        raise TensorFormatError(path, len(data), "truncated header")
    if data[:4] != MAGIC:
        raise TensorFormatError(path, 0, f"bad magic {data[:4]!r}, expected {MAGIC!r}")

    rank = int(np.frombuffer(data, dtype=_U32, count=1, offset=4)[0])
    dims_end = 8 + 4 * rank
    if len(data) < dims_end:
        raise TensorFormatError(path, len(data), f"truncated extents, rank {rank} needs {dims_end} header bytes")

    dims = tuple(int(d) for d in np.frombuffer(data, dtype=_U32, count=rank, offset=8))
    expected = dims_end + 4 * int(np.prod(dims, dtype=np.int64))
    if len(data) != expected:
        reason = f"payload holds {len(data) - dims_end} bytes, extents {dims} need {expected - dims_end}"
        raise TensorFormatError(path, min(len(data), expected), reason)

    return np.frombuffer(data, dtype=_F32, offset=dims_end).reshape(dims).astype(np.float32)


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))
    log.debug("Wrote %s tensor to %s", array.shape, path)


def load_tensor(path: str | Path) -> FloatArray:
    return decode_tensor(Path(path).read_bytes(), path=str(path))
