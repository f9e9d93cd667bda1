"""Forward and backward passes for every layer kind in the architecture grammar.

All ops are pure functions: parameters come in, activations and gradients
come out, nothing is cached inside module state. Volume inputs are
(channels, t, h, w) for a single sample or (batch, channels, t, h, w);
single samples are handled by temporarily adding a batch axis.

The 3D convolution has two lowerings:

* :func:`conv3d_forward` gathers kernel windows into a patch matrix
  (one strided-view copy) and runs a single matrix product; this is the
  production path.
* :func:`conv3d_forward_naive` is the direct-loop reference used to
  cross-check the lowering. The two must agree to 1e-6 relative in
  float32.

Reduction order note: the patch-matrix product accumulates over the
(channel, dt, dy, dx) axis in row-major window order via BLAS; results
are deterministic for a fixed thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ShapeError


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], False
    if x.ndim == rank + 1:
        return x, True
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


# ---------------------------------------------------------------------------
# 3D convolution
# ---------------------------------------------------------------------------


def conv3d_output_shape(
    in_shape: tuple[int, int, int], kernel: int, stride: int, pad: int
) -> tuple[int, int, int]:
    dims = []
    for n in in_shape:
        padded = n + 2 * pad
        if padded < kernel:
            raise ShapeError(f"conv kernel {kernel} larger than padded extent {padded}")
        dims.append((padded - kernel) // stride + 1)
    return tuple(dims)


def _check_conv_args(x: np.ndarray, weights: np.ndarray) -> int:
    if weights.ndim != 5 or not (weights.shape[2] == weights.shape[3] == weights.shape[4]):
        raise ShapeError(f"conv weights must be (filters, channels, k, k, k), got {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"conv channel mismatch: input has {x.shape[1]} channels, "
            f"weights expect {weights.shape[1]}"
        )
    return weights.shape[2]


def _conv_windows(xp: np.ndarray, k: int, stride: int, out_dims: tuple[int, int, int]) -> np.ndarray:
    """Strided view (B, C, k, k, k, T', H', W') over the padded input.

    Channel-and-offset axes lead so the patch-matrix copy walks the input
    along contiguous rows, which is what makes the lowering fast.
    """
    b, c, t, h, w = xp.shape
    to, ho, wo = out_dims
    sb, sc, st, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(b, c, k, k, k, to, ho, wo),
        strides=(sb, sc, st, sh, sw, st * stride, sh * stride, sw * stride),
        writeable=False,
    )


def _lower_to_cols(xb: np.ndarray, k: int, stride: int, pad: int, out_dims) -> np.ndarray:
    """Patch matrix (B, C*k^3, positions); the one gather copy of the lowering."""
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    return _conv_windows(xp, k, stride, out_dims).reshape(xb.shape[0], xb.shape[1] * k**3, -1)


def conv3d_forward(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None,
    stride: int = 1,
    pad: int = 1,
    cols_out: list | None = None,
) -> np.ndarray:
    """Cross-correlate a volume with a bank of cubic kernels.

    out[f, t, y, x] = bias_f + sum_{c,dt,dy,dx} w[f,c,dt,dy,dx] *
    x_pad[c, t*stride+dt, y*stride+dy, x*stride+dx]

    Passing a list as ``cols_out`` appends the patch matrix so a following
    :func:`conv3d_backward` call can skip rebuilding it.
    """
    xb, had_batch = _batched(x, 4)
    k = _check_conv_args(xb, weights)
    nf = weights.shape[0]
    out_dims = conv3d_output_shape(xb.shape[2:], k, stride, pad)

    b = xb.shape[0]
    cols = _lower_to_cols(xb, k, stride, pad, out_dims)
    if cols_out is not None:
        cols_out.append(cols)
    out = np.matmul(weights.reshape(nf, -1)[None], cols)  # (B, F, positions)
    out = out.reshape(b, nf, *out_dims)
    if bias is not None:
        out += bias[:, None, None, None]
    return out if had_batch else out[0]


def conv3d_backward(
    x: np.ndarray,
    weights: np.ndarray,
    grad_out: np.ndarray,
    stride: int = 1,
    pad: int = 1,
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact adjoint of :func:`conv3d_forward`; returns (grad_x, grad_w, grad_b).

    Parameter gradients are summed over the batch; divide upstream if a
    mean reduction is wanted (the loss backward already carries 1/B).
    ``cols`` may carry the patch matrix captured by the forward call.
    """
    xb, had_batch = _batched(x, 4)
    k = _check_conv_args(xb, weights)
    nf = weights.shape[0]
    nc = xb.shape[1]
    out_dims = conv3d_output_shape(xb.shape[2:], k, stride, pad)
    gb, _ = _batched(grad_out, 4)
    if gb.shape != (xb.shape[0], nf, *out_dims):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(xb.shape[0], nf, *out_dims)}"
        )

    b = xb.shape[0]
    gmat = gb.reshape(b, nf, -1)
    grad_b = gb.sum(axis=(0, 2, 3, 4))

    if cols is None:
        cols = _lower_to_cols(xb, k, stride, pad, out_dims)
    # batched GEMM over the transposed view; BLAS reads the stride directly
    grad_w = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.shape)

    grad_cols = np.matmul(weights.reshape(nf, -1).T[None], gmat)
    grad_cols = grad_cols.reshape(b, nc, k, k, k, *out_dims)
    padded = tuple(n + 2 * pad for n in xb.shape[2:])
    grad_xp = np.zeros((b, nc, *padded), dtype=xb.dtype)
    to, ho, wo = out_dims
    for dt in range(k):
        for dy in range(k):
            for dx in range(k):
                grad_xp[
                    :,
                    :,
                    dt : dt + stride * (to - 1) + 1 : stride,
                    dy : dy + stride * (ho - 1) + 1 : stride,
                    dx : dx + stride * (wo - 1) + 1 : stride,
                ] += grad_cols[:, :, dt, dy, dx]
    if pad:
        grad_x = grad_xp[:, :, pad:-pad, pad:-pad, pad:-pad]
    else:
        grad_x = grad_xp
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x if had_batch else grad_x[0]), grad_w, grad_b


def conv3d_forward_naive(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None,
    stride: int = 1,
    pad: int = 1,
) -> np.ndarray:
    """Direct-loop reference convolution; slow, for cross-checking only."""
    xb, had_batch = _batched(x, 4)
    k = _check_conv_args(xb, weights)
    nf = weights.shape[0]
    out_dims = conv3d_output_shape(xb.shape[2:], k, stride, pad)
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    out = np.zeros((xb.shape[0], nf, *out_dims), dtype=xb.dtype)
    for n in range(xb.shape[0]):
        for f in range(nf):
            for t in range(out_dims[0]):
                for y in range(out_dims[1]):
                    for xx in range(out_dims[2]):
                        patch = xp[
                            n,
                            :,
                            t * stride : t * stride + k,
                            y * stride : y * stride + k,
                            xx * stride : xx * stride + k,
                        ]
                        acc = np.sum(weights[f] * patch, dtype=xb.dtype)
                        if bias is not None:
                            acc = acc + bias[f]
                        out[n, f, t, y, xx] = acc
    return out if had_batch else out[0]


# ---------------------------------------------------------------------------
# 3D max pooling (ceil mode, boundary-clipped windows)
# ---------------------------------------------------------------------------


def pool3d_output_shape(
    in_shape: tuple[int, int, int], kernel_t: int, kernel_s: int, stride_t: int, stride_s: int
) -> tuple[int, int, int]:
    dims = []
    for n, k, s in zip(in_shape, (kernel_t, kernel_s, kernel_s), (stride_t, stride_s, stride_s)):
        if n < k:
            raise ShapeError(f"pool kernel {k} larger than axis extent {n}")
        n_out = math.ceil((n - k) / s) + 1
        if (n_out - 1) * s > n - 1:
            raise ShapeError(f"pool stride {s} starts a window beyond extent {n}")
        dims.append(n_out)
    return tuple(dims)


def maxpool3d_forward(
    x: np.ndarray, kernel_t: int, kernel_s: int, stride_t: int, stride_s: int
) -> tuple[np.ndarray, np.ndarray]:
    """Max over each (kernel_t, kernel_s, kernel_s) window.

    Output extent per axis is ceil((n - k) / s) + 1; windows sticking out
    of the volume are clipped at the boundary. Returns the pooled tensor
    and, per output cell, the flat (t*h*w) source index of the maximum
    (first occurrence in window scan order on ties).
    """
    xb, had_batch = _batched(x, 4)
    b, c, t, h, w = xb.shape
    to, ho, wo = pool3d_output_shape((t, h, w), kernel_t, kernel_s, stride_t, stride_s)

    tp = (to - 1) * stride_t + kernel_t
    hp = (ho - 1) * stride_s + kernel_s
    wp = (wo - 1) * stride_s + kernel_s
    xp = np.full((b, c, tp, hp, wp), -np.inf, dtype=xb.dtype)
    xp[:, :, :t, :h, :w] = xb

    best = np.full((b, c, to, ho, wo), -np.inf, dtype=xb.dtype)
    arg = np.zeros((b, c, to, ho, wo), dtype=np.int64)
    ts = np.arange(to) * stride_t
    ys = np.arange(ho) * stride_s
    xs = np.arange(wo) * stride_s
    for dt in range(kernel_t):
        for dy in range(kernel_s):
            for dx in range(kernel_s):
                cand = xp[
                    :,
                    :,
                    dt : dt + stride_t * (to - 1) + 1 : stride_t,
                    dy : dy + stride_s * (ho - 1) + 1 : stride_s,
                    dx : dx + stride_s * (wo - 1) + 1 : stride_s,
                ]
                src = (
                    ((ts + dt)[:, None, None] * h + (ys + dy)[None, :, None]) * w
                    + (xs + dx)[None, None, :]
                )
                better = cand > best
                best = np.where(better, cand, best)
                arg = np.where(better, src, arg)
    out = np.ascontiguousarray(best)
    if had_batch:
        return out, arg
    return out[0], arg[0]


def maxpool3d_backward(
    grad_out: np.ndarray, argmax: np.ndarray, in_shape: tuple[int, int, int]
) -> np.ndarray:
    """Route each output gradient back to its argmax source element."""
    gb, had_batch = _batched(grad_out, 4)
    ab, _ = _batched(argmax, 4)
    if ab.shape != gb.shape:
        raise ShapeError(f"argmax shape {argmax.shape} does not match grad_out {grad_out.shape}")
    t, h, w = in_shape
    if ab.size and (ab.max() >= t * h * w or ab.min() < 0):
        raise ShapeError(f"argmax indices out of range for input volume {in_shape}")
    b, c = gb.shape[:2]
    grad = np.zeros((b, c, t * h * w), dtype=gb.dtype)
    bidx = np.arange(b)[:, None, None, None, None]
    cidx = np.arange(c)[None, :, None, None, None]
    np.add.at(grad, (bidx, cidx, ab), gb)
    grad = grad.reshape(b, c, t, h, w)
    return grad if had_batch else grad[0]


# ---------------------------------------------------------------------------
# ReLU, fully connected, softmax
# ---------------------------------------------------------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return grad_out * (x > 0)


def _flatten_features(x: np.ndarray, n_in: int) -> np.ndarray:
    """Row-major flatten of everything after the batch axis to n_in."""
    if x.ndim == 1 or (x.ndim > 1 and x.shape == (n_in,)):
        return x.reshape(1, n_in)
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != n_in:
        raise ShapeError(f"fc input {x.shape} does not flatten to width {n_in}")
    return flat


def fc_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """y = W x + b with weights (n_out, n_in); flattens volume inputs."""
    single = x.ndim == 1
    flat = _flatten_features(x, weights.shape[1])
    y = flat @ weights.T
    if bias is not None:
        y = y + bias
    return y[0] if single else y


def fc_backward(
    x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    single = x.ndim == 1
    flat = _flatten_features(x, weights.shape[1])
    g = grad_out.reshape(flat.shape[0], weights.shape[0])
    grad_w = g.T @ flat
    grad_b = g.sum(axis=0)
    grad_x = (g @ weights).reshape(x.shape if not single else (weights.shape[1],))
    return grad_x, grad_w, grad_b


def softmax_forward(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, computed with max subtraction."""
    if logits.shape[-1] < 2:
        raise ShapeError(f"softmax needs >= 2 logits, got shape {logits.shape}")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_logloss(probs: np.ndarray, label) -> np.ndarray | float:
    """Multinomial log loss -log p[label]; per-sample values for batches."""
    if probs.ndim == 1:
        label = int(label)
        if not 0 <= label < probs.shape[0]:
            raise ValueError(f"label {label} out of range for {probs.shape[0]} classes")
        return float(-np.log(probs[label]))
    labels = np.asarray(label)
    if labels.shape != (probs.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {probs.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError(f"label out of range for {probs.shape[1]} classes")
    return -np.log(probs[np.arange(probs.shape[0]), labels])


def softmax_logloss_grad(probs: np.ndarray, label) -> np.ndarray:
    """d(logloss)/d(logits) = probs - onehot(label), per sample."""
    if probs.ndim == 1:
        grad = probs.copy()
        grad[int(label)] -= 1
        return grad
    labels = np.asarray(label)
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), labels] -= 1
    return grad
