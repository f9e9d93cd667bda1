"""Gradient-ascent synthesis of inputs that excite chosen code neurons.

Starting from a seeded uniform-noise clip with values in [0.4, 0.6], the
input is pushed up the activation gradient of one code-head neuron with
an L2 pull toward zero and a clamp to the unit range after every step:

    x <- clamp(x + eta * d a_j / d x - lambda * x, 0, 1)

Network parameters are frozen throughout; only the input moves. The
per-step activation trace is returned alongside the final clip so ascent
can be asserted, and frames can be dumped as PPM images (min-max
normalized over the whole clip, so temporal contrast is preserved).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import write_ppm
from .network import Network


@dataclass
class VizConfig:
    neuron: int
    steps: int = 200
    step_size: float = 1.0
    l2_decay: float = 0.0001
    seed: int = 0
    input_shape: tuple[int, int, int, int] | None = None  # falls back to the net's

    def __post_init__(self):
        if self.neuron < 0:
            raise ValueError(f"negative neuron index {self.neuron}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step size must be positive, got {self.step_size}")
        if self.l2_decay < 0:
            raise ValueError(f"l2 decay must be nonnegative, got {self.l2_decay}")


@dataclass
class VizResult:
    clip: np.ndarray          # (c, t, h, w), clamped to [0, 1]
    activations: list[float]  # initial value plus one entry per step


def visualize_neuron(net: Network, cfg: VizConfig) -> VizResult:
    """Ascend one code neuron's activation over a synthetic input clip."""
    if not net.has_code_head:
        raise ValueError("network has no code head to visualize")
    if cfg.neuron >= net.spec.code_width:
        raise ValueError(f"neuron {cfg.neuron} out of range for code width {net.spec.code_width}")
    shape = cfg.input_shape or net.input_shape
    if shape is None:
        raise ValueError("input shape unknown; set VizConfig.input_shape")

    rng = np.random.default_rng([cfg.seed, cfg.neuron, 0x71])
    x = rng.uniform(0.4, 0.6, size=(1, *shape)).astype(net.dtype)

    act, grad = net.code_activation_and_grad(x, cfg.neuron)
    trace = [float(act[0])]
    for _ in range(cfg.steps):
        x = np.clip(x + cfg.step_size * grad - cfg.l2_decay * x, 0.0, 1.0).astype(net.dtype)
        act, grad = net.code_activation_and_grad(x, cfg.neuron)
        trace.append(float(act[0]))
    return VizResult(x[0], trace)


def write_viz_outputs(out_dir, result: VizResult, neuron: int) -> Path:
    """Dump frames as PPM plus the activation trace as CSV."""
    out = Path(out_dir) / f"neuron_{neuron}"
    out.mkdir(parents=True, exist_ok=True)
    clip = result.clip
    lo, hi = clip.min(), clip.max()
    span = hi - lo if hi > lo else 1.0
    for t in range(clip.shape[1]):
        frame = np.clip(np.rint((clip[:, t] - lo) / span * 255.0), 0, 255).astype(np.uint8)
        write_ppm(out / f"frame_{t:02d}.ppm", frame)
    with open(out / "activations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "activation"])
        for i, a in enumerate(result.activations):
            writer.writerow([i, repr(a)])
    return out
