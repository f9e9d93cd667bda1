"""Dense optical flow between consecutive frames and its 8-bit image encoding.

Flow is estimated with a Horn-Schunck variational solver: Jacobi
iterations on the Euler-Lagrange equations with central-difference image
gradients, zero-flow initialization, and a fixed iteration count, so the
result is deterministic. The smoothness weight is expressed in 8-bit
intensity units (gradients of a 0..255 image); the clip pipeline scales
[0, 1] frames accordingly before estimating.

A flow field is packed into a 3-channel 8-bit image: the x and y
displacement channels are centered at 128 and scaled by a fixed factor,
the magnitude channel is scaled by the same factor but not centered
(magnitudes are nonnegative). Zero flow encodes to (128, 128, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

DEFAULT_SMOOTHNESS = 10.0
DEFAULT_ITERATIONS = 100
DEFAULT_ENCODE_SCALE = 8.0


@dataclass
class FlowField:
    """Per-pixel displacement in pixels/frame: u horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError(f"u/v must be equal-shape 2D fields, got {self.u.shape} and {self.v.shape}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def _neighbor_average(f: np.ndarray) -> np.ndarray:
    """Weighted 8-neighborhood average over the last two axes, replicated borders."""
    widths = [(0, 0)] * (f.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(f, widths, mode="edge")
    return (
        (p[..., :-2, 1:-1] + p[..., 2:, 1:-1] + p[..., 1:-1, :-2] + p[..., 1:-1, 2:]) / 6.0
        + (p[..., :-2, :-2] + p[..., :-2, 2:] + p[..., 2:, :-2] + p[..., 2:, 2:]) / 12.0
    )


def _solve_flow(a: np.ndarray, b: np.ndarray, smoothness: float, iterations: int):
    """Jacobi iterations on stacked frame pairs (..., h, w); returns (u, v)."""
    mean = 0.5 * (a + b)
    iy, ix = np.gradient(mean, axis=(-2, -1))  # central inside, one-sided at borders
    it = b - a

    denom = smoothness * smoothness + ix * ix + iy * iy
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    for _ in range(iterations):
        u_bar = _neighbor_average(u)
        v_bar = _neighbor_average(v)
        t = (ix * u_bar + iy * v_bar + it) / denom
        u = u_bar - ix * t
        v = v_bar - iy * t
    return u, v


def estimate_flow(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    smoothness: float = DEFAULT_SMOOTHNESS,
    iterations: int = DEFAULT_ITERATIONS,
) -> FlowField:
    """Estimate dense flow carrying frame_a onto frame_b.

    Frames are single-channel 2D arrays on a common intensity scale; the
    smoothness weight is calibrated for 0..255 intensities. Identical
    frames produce exactly zero flow.
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < 3:
        raise ShapeError(f"need at least 3x3 grayscale frames, got {a.shape}")
    if smoothness <= 0:
        raise ValueError(f"smoothness must be positive, got {smoothness}")
    u, v = _solve_flow(a, b, smoothness, iterations)
    return FlowField(u, v)


def encode_flow_image(field: FlowField, scale: float = DEFAULT_ENCODE_SCALE) -> np.ndarray:
    """Pack a flow field into a (3, h, w) uint8 image.

    Channel 0: clamp(round(128 + scale*u)); channel 1: same for v;
    channel 2: clamp(round(scale * magnitude)).
    """
    if scale <= 0:
        raise ValueError(f"encode scale must be positive, got {scale}")
    ch_u = np.clip(np.rint(128.0 + scale * field.u), 0, 255)
    ch_v = np.clip(np.rint(128.0 + scale * field.v), 0, 255)
    ch_m = np.clip(np.rint(scale * field.magnitude), 0, 255)
    return np.stack([ch_u, ch_v, ch_m]).astype(np.uint8)


def decode_flow_image(image: np.ndarray, scale: float = DEFAULT_ENCODE_SCALE) -> FlowField:
    """Invert :func:`encode_flow_image` up to quantization (and clamping)."""
    img = np.asarray(image, dtype=np.float64)
    return FlowField((img[0] - 128.0) / scale, (img[1] - 128.0) / scale)


def frames_to_grayscale(frames: np.ndarray) -> np.ndarray:
    """(f, 3, h, w) unit-range frames -> (f, h, w) 0..255 grayscale."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ShapeError(f"expected (frames, 3, h, w), got {frames.shape}")
    return frames.mean(axis=1) * 255.0


def video_to_flow_clip(
    frames: np.ndarray,
    smoothness: float = DEFAULT_SMOOTHNESS,
    iterations: int = DEFAULT_ITERATIONS,
    scale: float = DEFAULT_ENCODE_SCALE,
) -> np.ndarray:
    """Convert f+1 video frames into f stacked flow images.

    Input is (f+1, 3, h, w) with values in [0, 1]; output is
    (3, f, h, w) in [0, 1] (encoded flow images divided by 255), ready to
    feed the flow-stream network.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] < 2:
        raise ValueError(f"need at least 2 frames of shape (f, 3, h, w), got {frames.shape}")
    if smoothness <= 0:
        raise ValueError(f"smoothness must be positive, got {smoothness}")
    gray = frames_to_grayscale(frames).astype(np.float64)
    # all consecutive pairs ride through one batched Jacobi solve
    u, v = _solve_flow(gray[:-1], gray[1:], smoothness, iterations)
    images = [encode_flow_image(FlowField(u[i], v[i]), scale) for i in range(u.shape[0])]
    stacked = np.stack(images, axis=1).astype(np.float32) / 255.0
    return stacked
