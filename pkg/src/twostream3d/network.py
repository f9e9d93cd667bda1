"""Network assembly: parameter init, stacked forward, and full backprop.

A :class:`Network` couples a parsed :class:`~twostream3d.netspec.NetworkSpec`
with a flat name -> array parameter dict. The trunk (convolutions, pools,
activations, fully connected layers) produces a feature vector per sample;
two heads read it: the softmax classifier and, optionally, the bias-free
code head. The combined training loss is

    L = mean logloss(softmax(W x + b), y) + alpha * mean ||q_y - A x||^2

with both reductions taken over the batch, so alpha keeps its meaning
across batch sizes.

Parameters are drawn layer by layer from independent seeded streams
(zero-mean Gaussian, std sqrt(2 / fan_in); biases zero), in float64 and
then cast, so the same seed yields corresponding float32/float64 nets and
adding the code head never changes how the trunk is initialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .codes import CodeAllocation, batch_code_gradients, predict_code, code_loss
from .netspec import FC, CodeLayer, Conv3D, NetworkSpec, Pool3D, ReLU, infer_shapes, parse_spec
from .tensor import ShapeError


@dataclass
class ForwardPass:
    """Head outputs for a batch of clips."""

    probs: np.ndarray            # (batch, classes)
    codes: np.ndarray | None     # (batch, code width) when a code head exists
    features: np.ndarray         # (batch, n) representation the heads read


@dataclass
class LossBreakdown:
    total: float
    softmax: float
    code: float


def _named_trunk(spec: NetworkSpec) -> list[tuple[str, object]]:
    steps = []
    counts = {"conv": 0, "pool": 0, "fc": 0}
    last = ""
    for sp in spec.trunk:
        if isinstance(sp, Conv3D):
            counts["conv"] += 1
            last = f"conv{counts['conv']}"
            steps.append((last, sp))
        elif isinstance(sp, Pool3D):
            counts["pool"] += 1
            steps.append((f"pool{counts['pool']}", sp))
        elif isinstance(sp, FC):
            counts["fc"] += 1
            last = f"fc{counts['fc']}"
            steps.append((last, sp))
        elif isinstance(sp, ReLU):
            steps.append((f"{last}.relu", sp))
        else:
            raise TypeError(f"unexpected trunk layer {sp!r}")
    return steps


def param_names(spec: NetworkSpec) -> list[str]:
    """Parameter keys in layer order; fixes the checkpoint blob order."""
    names = []
    for name, sp in _named_trunk(spec):
        if isinstance(sp, (Conv3D, FC)):
            names += [f"{name}.w", f"{name}.b"]
    names += ["sm.w", "sm.b"]
    if spec.code is not None:
        names.append("code.w")
    return names


class Network:
    """A trunk plus softmax head and optional code head."""

    def __init__(
        self,
        spec: NetworkSpec,
        params: dict[str, np.ndarray],
        alloc: CodeAllocation | None = None,
        input_shape: tuple[int, int, int, int] | None = None,
    ):
        if (spec.code is not None) != (alloc is not None):
            raise ValueError("code head and CodeAllocation must come together")
        if alloc is not None and (alloc.classes, alloc.width) != (spec.classes, spec.code_width):
            raise ValueError(
                f"allocation ({alloc.classes}, {alloc.width}) does not match "
                f"spec heads ({spec.classes}, {spec.code_width})"
            )
        self.spec = spec
        self.params = params
        self.alloc = alloc
        self.input_shape = input_shape
        self._steps = _named_trunk(spec)

    # -- construction -------------------------------------------------

    @classmethod
    def build(
        cls,
        spec,
        input_shape: tuple[int, int, int, int],
        seed: int = 0,
        dtype=np.float32,
        priority=None,
    ) -> "Network":
        """Initialize a network for single-sample input shape (c, t, h, w)."""
        if isinstance(spec, str):
            spec = parse_spec(spec)
        shapes = infer_shapes(spec, input_shape)
        steps = _named_trunk(spec)

        plan: list[tuple[str, tuple[int, ...], int]] = []  # (name, w shape, fan_in)
        cur = tuple(input_shape)
        for (name, sp), out_shape in zip(steps, shapes[1:]):
            if isinstance(sp, Conv3D):
                k = sp.kernel
                fan_in = cur[0] * k * k * k
                plan.append((name, (sp.filters, cur[0], k, k, k), fan_in))
            elif isinstance(sp, FC):
                n_in = 1
                for s in cur:
                    n_in *= int(s)
                plan.append((name, (sp.width, n_in), n_in))
            cur = out_shape

        n_feat = 1
        for s in shapes[len(steps)]:
            n_feat *= int(s)
        plan.append(("sm", (spec.classes, n_feat), n_feat))
        alloc = None
        if spec.code is not None:
            plan.append(("code", (spec.code_width, n_feat), n_feat))
            alloc = CodeAllocation.uniform(spec.classes, spec.code_width, priority)

        params: dict[str, np.ndarray] = {}
        streams = np.random.SeedSequence(seed).spawn(len(plan))
        for (name, w_shape, fan_in), ss in zip(plan, streams):
            rng = np.random.default_rng(ss)
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w_shape)
            params[f"{name}.w"] = w.astype(dtype)
            if name != "code":
                params[f"{name}.b"] = np.zeros(w_shape[0], dtype=dtype)
        return cls(spec, params, alloc, tuple(input_shape))

    @property
    def dtype(self):
        return self.params["sm.w"].dtype

    @property
    def has_code_head(self) -> bool:
        return self.spec.code is not None

    def astype(self, dtype) -> "Network":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return Network(self.spec, params, self.alloc, self.input_shape)

    def copy(self) -> "Network":
        params = {k: v.copy() for k, v in self.params.items()}
        return Network(self.spec, params, self.alloc, self.input_shape)

    # -- forward ------------------------------------------------------

    def _trunk_forward(self, x: np.ndarray):
        """Run the trunk; returns (features, step caches)."""
        caches = []
        cur = x
        for name, sp in self._steps:
            if isinstance(sp, Conv3D):
                cols: list = []
                out = layers.conv3d_forward(
                    cur, self.params[f"{name}.w"], self.params[f"{name}.b"],
                    sp.stride, sp.pad, cols_out=cols,
                )
                caches.append((name, sp, cur, cols[0]))
            elif isinstance(sp, Pool3D):
                out, arg = layers.maxpool3d_forward(
                    cur, sp.kernel_t, sp.kernel_s, sp.stride_t, sp.stride_s
                )
                caches.append((name, sp, cur, arg))
            elif isinstance(sp, FC):
                out = layers.fc_forward(cur, self.params[f"{name}.w"], self.params[f"{name}.b"])
                caches.append((name, sp, cur, None))
            elif isinstance(sp, ReLU):
                out = layers.relu_forward(cur)
                caches.append((name, sp, cur, None))
            cur = out
        features = cur.reshape(cur.shape[0], -1)
        return features, caches

    def forward(self, x: np.ndarray) -> ForwardPass:
        """Head outputs for a batch (b, c, t, h, w) of clips."""
        x = self._check_input(x)
        features, _ = self._trunk_forward(x)
        logits = layers.fc_forward(features, self.params["sm.w"], self.params["sm.b"])
        probs = layers.softmax_forward(logits)
        codes = predict_code(features, self.params["code.w"]) if self.has_code_head else None
        return ForwardPass(probs, codes, features)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 4:
            x = x[None]
        if x.ndim != 5:
            raise ShapeError(f"expected a (batch, c, t, h, w) clip batch, got {x.shape}")
        if self.input_shape is not None and tuple(x.shape[1:]) != tuple(self.input_shape):
            raise ShapeError(f"clip shape {x.shape[1:]} does not match network input {self.input_shape}")
        if x.dtype != self.dtype:
            x = x.astype(self.dtype)
        return x

    # -- loss and gradients -------------------------------------------

    def _check_labels(self, labels, batch: int) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (batch,):
            raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
        return labels

    def head_loss(self, features: np.ndarray, labels: np.ndarray, alpha: float) -> LossBreakdown:
        """Combined loss of both heads as a function of the feature vector."""
        labels = self._check_labels(labels, features.shape[0])
        logits = layers.fc_forward(features, self.params["sm.w"], self.params["sm.b"])
        probs = layers.softmax_forward(logits)
        loss_c = float(np.mean(layers.softmax_logloss(probs, labels)))
        loss_d = 0.0
        if self.has_code_head:
            targets = self.alloc.target_codes(labels, dtype=self.dtype)
            loss_d = float(np.mean(code_loss(predict_code(features, self.params["code.w"]), targets)))
        return LossBreakdown(loss_c + alpha * loss_d, loss_c, loss_d)

    def head_grads(self, features: np.ndarray, labels: np.ndarray, alpha: float):
        """Losses, head parameter gradients, and the assembled feature gradient.

        The feature gradient is the softmax branch plus, for alpha > 0, the
        code branch's 2 alpha A^T (A x - q) term (batch-mean scaled).
        """
        labels = self._check_labels(labels, features.shape[0])
        b = features.shape[0]
        logits = layers.fc_forward(features, self.params["sm.w"], self.params["sm.b"])
        probs = layers.softmax_forward(logits)
        loss_c = float(np.mean(layers.softmax_logloss(probs, labels)))

        grads: dict[str, np.ndarray] = {}
        dlogits = layers.softmax_logloss_grad(probs, labels) / b
        dfeat, grads["sm.w"], grads["sm.b"] = layers.fc_backward(features, self.params["sm.w"], dlogits)

        loss_d = 0.0
        if self.has_code_head:
            targets = self.alloc.target_codes(labels, dtype=self.dtype)
            codes = predict_code(features, self.params["code.w"])
            loss_d = float(np.mean(code_loss(codes, targets)))
            grad_a, dfeat_code = batch_code_gradients(features, self.params["code.w"], targets, alpha)
            grads["code.w"] = grad_a
            if alpha != 0.0:
                # skipped entirely at alpha == 0 so an idle code head leaves
                # the trunk's float trajectory untouched
                dfeat = dfeat + dfeat_code
        return LossBreakdown(loss_c + alpha * loss_d, loss_c, loss_d), grads, dfeat

    def loss(self, x: np.ndarray, labels: np.ndarray, alpha: float = 0.02) -> LossBreakdown:
        """Forward-only combined loss for a batch."""
        if alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        x = self._check_input(x)
        features, _ = self._trunk_forward(x)
        return self.head_loss(features, labels, alpha)

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, alpha: float = 0.02):
        """Combined loss and batch-mean gradients for every parameter.

        Returns (LossBreakdown, grads dict keyed like ``params``).
        """
        if alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        x = self._check_input(x)
        labels = self._check_labels(labels, x.shape[0])

        features, caches = self._trunk_forward(x)
        losses, grads, dfeat = self.head_grads(features, labels, alpha)
        if not np.isfinite(losses.total):
            logits = layers.fc_forward(features, self.params["sm.w"], self.params["sm.b"])
            raise ValueError(f"non-finite loss at {self._first_bad_layer(caches, logits)}")

        self._trunk_backward(caches, dfeat, grads)
        return losses, grads

    def features(self, x: np.ndarray) -> np.ndarray:
        """Trunk output as a (batch, n) matrix, without running the heads."""
        x = self._check_input(x)
        feats, _ = self._trunk_forward(x)
        return feats

    def _trunk_backward(self, caches, dfeat: np.ndarray, grads: dict[str, np.ndarray]) -> np.ndarray:
        """Propagate a feature-vector gradient back to the input.

        Parameter gradients are written into ``grads``; the return value is
        the gradient with respect to the network input.
        """
        grad = dfeat
        for name, sp, inp, aux in reversed(caches):
            if isinstance(sp, Conv3D):
                out_dims = layers.conv3d_output_shape(inp.shape[2:], sp.kernel, sp.stride, sp.pad)
                grad = grad.reshape(inp.shape[0], self.params[f"{name}.w"].shape[0], *out_dims)
                grad, grads[f"{name}.w"], grads[f"{name}.b"] = layers.conv3d_backward(
                    inp, self.params[f"{name}.w"], grad, sp.stride, sp.pad, cols=aux
                )
            elif isinstance(sp, Pool3D):
                grad = grad.reshape(aux.shape)
                grad = layers.maxpool3d_backward(grad, aux, inp.shape[2:])
            elif isinstance(sp, FC):
                grad = grad.reshape(inp.shape[0], self.params[f"{name}.w"].shape[0])
                grad, grads[f"{name}.w"], grads[f"{name}.b"] = layers.fc_backward(
                    inp, self.params[f"{name}.w"], grad
                )
            elif isinstance(sp, ReLU):
                grad = layers.relu_backward(inp, grad.reshape(inp.shape))
        return grad

    def _first_bad_layer(self, caches, logits) -> str:
        for name, sp, inp, _ in caches:
            if not np.all(np.isfinite(inp)):
                return f"input of {name}"
        if not np.all(np.isfinite(logits)):
            return "softmax head"
        return "loss reduction"

    # -- head introspection (used by the visualizer) -------------------

    def code_activation_and_grad(self, x: np.ndarray, neuron: int):
        """Activation of one code neuron and its gradient w.r.t. the input."""
        if not self.has_code_head:
            raise ValueError("network has no code head")
        if not 0 <= neuron < self.spec.code_width:
            raise ValueError(f"neuron {neuron} out of range for code width {self.spec.code_width}")
        x = self._check_input(x)
        features, caches = self._trunk_forward(x)
        act = features @ self.params["code.w"][neuron]
        dfeat = np.broadcast_to(self.params["code.w"][neuron], features.shape).astype(self.dtype)
        scratch: dict[str, np.ndarray] = {}
        grad = self._trunk_backward(caches, dfeat, scratch)
        return act, grad.reshape(x.shape)
