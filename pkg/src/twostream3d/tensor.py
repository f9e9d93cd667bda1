"""Dense tensor plumbing: contract-checked array ops and binary blob I/O.

Tensors are plain numpy arrays, restricted to two dtypes: float32 (the
training default) and float64 (mandatory for finite-difference gradient
checking). All arrays are kept C-contiguous (row-major), which is the
single layout convention the convolution lowering and the checkpoint
format rely on.

The on-disk blob format (used by checkpoints, dataset files and flow
clips) is little-endian:

    magic   4 bytes   b"T3D1"
    dtype   u8        0 = float32, 1 = float64
    rank    u8
    extents rank*u64
    data    raw row-major little-endian values
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Callable, Sequence

import numpy as np

BLOB_MAGIC = b"T3D1"

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def as_tensor(values, dtype=np.float32) -> np.ndarray:
    """Return a C-contiguous array of the supported dtype."""
    dt = np.dtype(dtype)
    if dt not in _TAG_FOR_KIND:
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    return np.ascontiguousarray(values, dtype=dt)


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two rank-2 tensors; inner dimensions must agree."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b, "sub")
    return a - b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise (Hadamard) product."""
    _check_same_shape(a, b, "mul")
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    """Multiply every element by the scalar ``s``."""
    return a * a.dtype.type(s)


def apply(a: np.ndarray, fn: Callable[[float], float]) -> np.ndarray:
    """Map a scalar function over every element, preserving shape and dtype."""
    out = np.frompyfunc(fn, 1, 1)(a)
    return out.astype(a.dtype)


def reshape(a: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Row-major reshape; element count must be preserved."""
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} ({a.size} elements) as {shape}")
    return np.ascontiguousarray(a).reshape(shape)


def slice_region(a: np.ndarray, region: Sequence[tuple[int, int]]) -> np.ndarray:
    """Copy the axis-aligned block given by per-axis (start, stop) bounds.

    Bounds must lie inside the tensor; numpy's silent clamping is rejected
    on purpose so out-of-range requests surface as errors.
    """
    if len(region) != a.ndim:
        raise ShapeError(f"slice: {len(region)} bounds for rank-{a.ndim} tensor {a.shape}")
    index = []
    for axis, (start, stop) in enumerate(region):
        if not (0 <= start < stop <= a.shape[axis]):
            raise ShapeError(
                f"slice: bounds [{start}, {stop}) out of range for axis {axis} of {a.shape}"
            )
        index.append(slice(start, stop))
    return a[tuple(index)].copy()


def pad(a: np.ndarray, widths: Sequence[tuple[int, int]] | int) -> np.ndarray:
    """Zero-pad per axis; ``widths`` is (before, after) pairs or one int for all."""
    if isinstance(widths, int):
        widths = [(widths, widths)] * a.ndim
    widths = [(int(lo), int(hi)) for lo, hi in widths]
    if len(widths) != a.ndim:
        raise ShapeError(f"pad: {len(widths)} width pairs for rank-{a.ndim} tensor")
    if any(lo < 0 or hi < 0 for lo, hi in widths):
        raise ValueError(f"pad: negative pad amounts {widths}")
    return np.pad(a, widths, mode="constant")


def write_blob(fh: BinaryIO, a: np.ndarray) -> None:
    """Serialize one tensor to an open binary stream."""
    dt = np.dtype(a.dtype)
    if dt not in _TAG_FOR_KIND:
        raise ValueError(f"unsupported dtype {dt} for blob serialization")
    if a.ndim > 255:
        raise ValueError("rank exceeds blob format limit")
    fh.write(BLOB_MAGIC)
    fh.write(struct.pack("<BB", _TAG_FOR_KIND[dt], a.ndim))
    fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    fh.write(np.ascontiguousarray(a).astype(_DTYPE_TAGS[_TAG_FOR_KIND[dt]]).tobytes())


def read_blob(fh: BinaryIO) -> np.ndarray:
    """Read one tensor written by :func:`write_blob`."""
    magic = fh.read(4)
    if magic != BLOB_MAGIC:
        raise ValueError(f"bad tensor blob magic {magic!r}")
    tag, rank = struct.unpack("<BB", fh.read(2))
    if tag not in _DTYPE_TAGS:
        raise ValueError(f"unknown dtype tag {tag}")
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    dt = _DTYPE_TAGS[tag]
    raw = fh.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise ValueError("truncated tensor blob")
    data = np.frombuffer(raw, dtype=dt).reshape(shape)
    # native-endian contiguous copy so the result is writable
    return np.ascontiguousarray(data.astype(dt.newbyteorder("=")))


def save_tensor(path, a: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_blob(fh, a)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_blob(fh)
