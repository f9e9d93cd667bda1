"""Minimal binary PPM/PGM writers for visual inspection artifacts."""

from __future__ import annotations

import numpy as np


def to_uint8(a: np.ndarray) -> np.ndarray:
    """Min-max normalize any real array onto 0..255."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi - lo < 1e-12:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.clip(np.rint((a - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, h, w) uint8 array as binary PPM (P6)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3, h, w) image, got {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    h, w = img.shape[1:]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Write an (h, w) uint8 array as binary PGM (P5)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected an (h, w) image, got {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM written by :func:`write_ppm`; returns (3, h, w)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError("only 8-bit PPM supported")
        raw = np.frombuffer(fh.read(3 * h * w), dtype=np.uint8)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).copy()
