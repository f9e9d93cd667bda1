"""Class-code targets and the code-loss head.

The code head is a bias-free linear map A: R^n_in -> R^N. Training pulls
its output toward a fixed binary target per class: with m classes and a
code of width N, each class owns a contiguous block of p = floor(N/m)
neurons (block for class c starts at index p*c, 0-based), and the
r = N - p*m leftover neurons at the tail are handed to a configurable
list of priority classes, one each. A sample's target code q has ones
exactly on the neurons owned by its class, so sum(q) is p or p+1.

The loss for one sample is the squared Euclidean distance between the
predicted code and its target, scaled into the combined objective by a
cost-balancing factor alpha:

    L = L_softmax + alpha * ||q - A x||^2

Both gradients of the alpha-scaled term have closed forms used here and
cross-checked by the gradient test harness:

    dL/dA = 2 alpha (A x - q) x^T
    dL/dx = 2 alpha A^T (A x - q)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass(frozen=True)
class CodeAllocation:
    """Assignment of code neurons to classes."""

    classes: int
    width: int
    priority: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError(f"need at least one class, got {self.classes}")
        if self.width < self.classes:
            raise ValueError(f"code width {self.width} smaller than class count {self.classes}")
        object.__setattr__(self, "priority", tuple(int(c) for c in self.priority))
        if len(self.priority) != self.remainder:
            raise ValueError(
                f"priority list has {len(self.priority)} entries, expected remainder "
                f"{self.remainder} for width {self.width} and {self.classes} classes"
            )
        if len(set(self.priority)) != len(self.priority):
            raise ValueError(f"duplicate priority classes {self.priority}")
        if any(not 0 <= c < self.classes for c in self.priority):
            raise ValueError(f"priority class out of range in {self.priority}")

    @classmethod
    def uniform(cls, classes: int, width: int, priority=None) -> "CodeAllocation":
        """Default allocation: leftover neurons go to the first classes."""
        remainder = width - (width // classes) * classes
        if priority is None:
            priority = tuple(range(remainder))
        return cls(classes, width, tuple(priority))

    @property
    def neurons_per_class(self) -> int:
        """p: size of every class's contiguous block."""
        return self.width // self.classes

    @property
    def remainder(self) -> int:
        return self.width - self.neurons_per_class * self.classes

    def block_start(self, label: int) -> int:
        return self.neurons_per_class * self._check_label(label)

    def neuron_class(self, neuron: int) -> int:
        """Class owning a neuron index."""
        if not 0 <= neuron < self.width:
            raise ValueError(f"neuron {neuron} out of range for width {self.width}")
        p = self.neurons_per_class
        if neuron < p * self.classes:
            return neuron // p
        return self.priority[neuron - p * self.classes]

    def class_neurons(self, label: int) -> np.ndarray:
        """All neuron indices owned by a class, block first, tail extras after."""
        label = self._check_label(label)
        p = self.neurons_per_class
        idx = list(range(p * label, p * (label + 1)))
        for offset, cls_ in enumerate(self.priority):
            if cls_ == label:
                idx.append(p * self.classes + offset)
        return np.asarray(idx, dtype=np.int64)

    def target_code(self, label: int, dtype=np.float64) -> np.ndarray:
        """Binary target vector q for one class."""
        q = np.zeros(self.width, dtype=dtype)
        q[self.class_neurons(label)] = 1
        return q

    def target_codes(self, labels: np.ndarray, dtype=np.float64) -> np.ndarray:
        """Stacked targets for a label vector, shape (batch, width)."""
        labels = np.asarray(labels)
        return np.stack([self.target_code(int(y), dtype) for y in labels])

    def _check_label(self, label: int) -> int:
        label = int(label)
        if not 0 <= label < self.classes:
            raise ValueError(f"class {label} out of range for {self.classes} classes")
        return label


def predict_code(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Code-head forward: A x, no bias, no nonlinearity. Batched over rows."""
    if weights.ndim != 2:
        raise ShapeError(f"code weights must be rank 2, got {weights.shape}")
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"code input width {x.shape} does not match weights {weights.shape}")
    return x @ weights.T


def code_loss(code: np.ndarray, target: np.ndarray):
    """Squared Euclidean distance ||q - code||^2, per sample for batches."""
    if code.shape != target.shape:
        raise ShapeError(f"code/target shape mismatch {code.shape} vs {target.shape}")
    d = target - code
    if d.ndim == 1:
        return float(d @ d)
    return np.einsum("ij,ij->i", d, d)


def combined_loss(probs: np.ndarray, label, code: np.ndarray, target: np.ndarray, alpha: float = 0.02) -> float:
    """L = softmax log loss + alpha * code loss, for one sample."""
    from .layers import softmax_logloss

    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    return float(softmax_logloss(probs, label)) + alpha * code_loss(code, target)


def code_gradients(
    x: np.ndarray, weights: np.ndarray, target: np.ndarray, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form gradients of alpha * ||q - A x||^2 for one sample.

    Returns (grad_A, grad_x) = (2a (Ax - q) x^T, 2a A^T (Ax - q)); the
    softmax branch's contribution to grad_x is assembled by the caller.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if x.ndim != 1 or target.ndim != 1:
        raise ShapeError("code_gradients is per-sample; use batch_code_gradients for batches")
    diff = predict_code(x, weights) - target
    grad_w = 2.0 * alpha * np.outer(diff, x)
    grad_x = 2.0 * alpha * (weights.T @ diff)
    return grad_w, grad_x


def batch_code_gradients(
    x: np.ndarray, weights: np.ndarray, targets: np.ndarray, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Batch-mean code-loss gradients: (grad_A, grad_x per sample)."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    diff = predict_code(x, weights) - targets
    scale = 2.0 * alpha / x.shape[0]
    grad_w = scale * (diff.T @ x)
    grad_x = scale * (diff @ weights)
    return grad_w, grad_x
