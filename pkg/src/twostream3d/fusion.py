"""Video-level aggregation, code-space classification, fusion, and metrics.

A trained stream emits per-clip class probabilities and (when the code
head is present) per-clip predicted codes. Videos are represented by the
arithmetic means over their clips. Classification then happens one of
three ways:

* softmax: argmax of the mean probability vector;
* k-NN: majority vote among the k globally nearest training codes;
* kernel: per-class mean distance to the k nearest training codes of
  that class, pushed through a Gaussian kernel exp(-gamma d_i^2) and
  l1-normalized into a probability vector.

Two streams are combined either by a weighted average of probability
vectors (the flow stream conventionally gets twice the weight of the
raw-intensity stream) or by a small trained head on the concatenated
mean codes: a single softmax layer, or one dense mixing layer (a 1x1
convolution over a single spatial cell) with ReLU followed by softmax.

The headline metric is the macro average of per-class recognition
precision: mean over classes of (correct in class / test samples in
class), with empty classes excluded and reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .network import Network
from .tensor import ShapeError
from .training import HistoryRow, TrainConfig, sgd_step


@dataclass
class FusionConfig:
    w_ir: float = 1.0
    w_flow: float = 2.0
    knn_k: int = 5
    gamma: float = 0.05
    nn_hidden: int = 50

    def __post_init__(self):
        if self.w_ir < 0 or self.w_flow < 0 or self.w_ir + self.w_flow <= 0:
            raise ValueError(f"invalid stream weights ({self.w_ir}, {self.w_flow})")
        if self.knn_k < 1:
            raise ValueError(f"knn_k must be >= 1, got {self.knn_k}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.nn_hidden < 1:
            raise ValueError(f"nn_hidden must be >= 1, got {self.nn_hidden}")


@dataclass
class VideoRepresentation:
    mean_probs: np.ndarray
    mean_code: np.ndarray | None = None


def aggregate_video(probs: np.ndarray, codes: np.ndarray | None = None) -> VideoRepresentation:
    """Mean over a video's clip outputs; probs (clips, m), codes (clips, n)."""
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValueError(f"need at least one clip of probabilities, got shape {probs.shape}")
    mean_code = None
    if codes is not None:
        codes = np.asarray(codes)
        if codes.shape[0] != probs.shape[0]:
            raise ShapeError(f"clip counts differ: {codes.shape[0]} codes vs {probs.shape[0]} probs")
        mean_code = codes.mean(axis=0)
    return VideoRepresentation(probs.mean(axis=0), mean_code)


def classify_softmax(rep: VideoRepresentation) -> int:
    """Argmax of the mean probabilities; ties resolve to the lowest index."""
    return int(np.argmax(rep.mean_probs))


def _check_class_counts(train_labels: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(train_labels)
    if counts.size == 0 or (counts < k).any():
        lacking = [int(c) for c in np.nonzero(counts < k)[0]]
        raise ValueError(f"classes {lacking} have fewer than {k} training codes")
    return counts


def knn_classify(code: np.ndarray, train_codes: np.ndarray, train_labels: np.ndarray, k: int = 5) -> int:
    """Majority vote among the k globally nearest training codes (Euclidean).

    Vote ties resolve to the smallest summed neighbor distance, then to
    the lowest class index. Needs at least k training codes in total;
    the per-class requirement applies only to the class distance profile.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if train_labels.size < k:
        raise ValueError(f"only {train_labels.size} training codes for k={k}")
    dists = np.linalg.norm(train_codes - code, axis=1)
    nearest = np.argsort(dists, kind="stable")[:k]
    votes = np.bincount(train_labels[nearest])
    best = votes.max()
    tied = np.nonzero(votes == best)[0]
    if len(tied) == 1:
        return int(tied[0])
    sums = {
        int(c): dists[nearest[train_labels[nearest] == c]].sum()
        for c in tied
    }
    smallest = min(sums.values())
    return min(c for c, s in sums.items() if s == smallest)


def class_distance_profile(
    code: np.ndarray, train_codes: np.ndarray, train_labels: np.ndarray, k: int = 5
) -> np.ndarray:
    """Per class, the mean distance to its k nearest training codes."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    counts = _check_class_counts(train_labels, k)
    dists = np.linalg.norm(train_codes - code, axis=1)
    profile = np.empty(counts.size)
    for c in range(counts.size):
        cls_d = np.sort(dists[train_labels == c], kind="stable")[:k]
        profile[c] = cls_d.mean()
    return profile


def code_to_probs(
    code: np.ndarray,
    train_codes: np.ndarray,
    train_labels: np.ndarray,
    k: int = 5,
    gamma: float = 0.05,
) -> np.ndarray:
    """Gaussian-kernel weights over class distances, l1-normalized."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = class_distance_profile(code, train_codes, train_labels, k)
    w = np.exp(-gamma * d * d)
    return w / w.sum()


def fuse_weighted(p_ir: np.ndarray, p_flow: np.ndarray, w_ir: float = 1.0, w_flow: float = 2.0) -> np.ndarray:
    """Weighted average of two probability vectors, renormalized by the weights."""
    p_ir = np.asarray(p_ir, dtype=np.float64)
    p_flow = np.asarray(p_flow, dtype=np.float64)
    if p_ir.shape != p_flow.shape:
        raise ShapeError(f"probability shapes differ: {p_ir.shape} vs {p_flow.shape}")
    if w_ir + w_flow <= 0 or w_ir < 0 or w_flow < 0:
        raise ValueError(f"invalid weights ({w_ir}, {w_flow})")
    return (w_ir * p_ir + w_flow * p_flow) / (w_ir + w_flow)


# ---------------------------------------------------------------------------
# trained fusion heads on concatenated codes
# ---------------------------------------------------------------------------


class FusionHead:
    """Softmax classifier over concatenated per-stream codes.

    ``hidden=None`` is the single-layer variant (linear 2N -> m plus
    softmax); an integer adds one dense mixing layer with ReLU before the
    softmax layer.
    """

    def __init__(self, params: dict[str, np.ndarray], hidden: int | None):
        self.params = params
        self.hidden = hidden

    @classmethod
    def build(cls, n_in: int, classes: int, hidden: int | None = None, seed: int = 0, init: str = "he"):
        streams = np.random.SeedSequence([seed, 0xF05E]).spawn(2)
        params: dict[str, np.ndarray] = {}

        def draw(rng, shape, fan_in):
            if init == "zeros":
                return np.zeros(shape, dtype=np.float64)
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        if hidden is not None:
            params["hidden.w"] = draw(np.random.default_rng(streams[0]), (hidden, n_in), n_in)
            params["hidden.b"] = np.zeros(hidden)
            n_in = hidden
        params["out.w"] = draw(np.random.default_rng(streams[1]), (classes, n_in), n_in)
        params["out.b"] = np.zeros(classes)
        return cls(params, hidden)

    def _forward(self, x: np.ndarray):
        pre = None
        if self.hidden is not None:
            pre = layers.fc_forward(x, self.params["hidden.w"], self.params["hidden.b"])
            x = layers.relu_forward(pre)
        logits = layers.fc_forward(x, self.params["out.w"], self.params["out.b"])
        return logits, pre

    def predict_probs(self, codes: np.ndarray) -> np.ndarray:
        logits, _ = self._forward(np.atleast_2d(codes))
        return layers.softmax_forward(logits)

    def loss_and_grads(self, codes: np.ndarray, labels: np.ndarray):
        codes = np.atleast_2d(codes)
        labels = np.asarray(labels, dtype=np.int64)
        b = codes.shape[0]
        hidden_out = codes
        pre = None
        if self.hidden is not None:
            pre = layers.fc_forward(codes, self.params["hidden.w"], self.params["hidden.b"])
            hidden_out = layers.relu_forward(pre)
        logits = layers.fc_forward(hidden_out, self.params["out.w"], self.params["out.b"])
        probs = layers.softmax_forward(logits)
        loss = float(np.mean(layers.softmax_logloss(probs, labels)))

        grads: dict[str, np.ndarray] = {}
        dlogits = layers.softmax_logloss_grad(probs, labels) / b
        dh, grads["out.w"], grads["out.b"] = layers.fc_backward(hidden_out, self.params["out.w"], dlogits)
        if self.hidden is not None:
            dpre = layers.relu_backward(pre, dh)
            _, grads["hidden.w"], grads["hidden.b"] = layers.fc_backward(codes, self.params["hidden.w"], dpre)
        return loss, grads

    def fit(self, codes: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> list[HistoryRow]:
        """Mini-batch SGD with the shared update rule and seeded shuffling."""
        codes = np.asarray(codes, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if codes.shape[0] != labels.shape[0] or codes.shape[0] == 0:
            raise ValueError(f"misaligned or empty training codes: {codes.shape} vs {labels.shape}")
        rng = np.random.default_rng([cfg.seed, 0xF17])
        velocity = {k: np.zeros_like(v) for k, v in self.params.items()}
        history: list[HistoryRow] = []
        iteration = 0
        while iteration < cfg.max_iterations:
            order = rng.permutation(codes.shape[0])
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                loss, grads = self.loss_and_grads(codes[idx], labels[idx])
                sgd_step(self.params, grads, cfg, velocity)
                history.append(HistoryRow(iteration, loss, loss, 0.0))
                iteration += 1
                if iteration >= cfg.max_iterations:
                    break
        return history

    def accuracy(self, codes: np.ndarray, labels: np.ndarray) -> float:
        preds = self.predict_probs(codes).argmax(axis=1)
        return float((preds == np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    confusion: np.ndarray             # (m, m) counts, rows = true class
    per_class: np.ndarray             # per-class precision, nan where untested
    ap: float                         # macro average over evaluated classes
    evaluated_classes: list[int] = field(default_factory=list)

    @property
    def excluded_classes(self) -> list[int]:
        return [c for c in range(self.confusion.shape[0]) if c not in self.evaluated_classes]


def metrics(predictions, labels, classes: int) -> MetricsReport:
    """Confusion matrix and macro-averaged per-class precision."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ShapeError(f"prediction/label length mismatch: {predictions.shape} vs {labels.shape}")
    confusion = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    row_sums = confusion.sum(axis=1)
    per_class = np.full(classes, np.nan)
    evaluated = []
    for c in range(classes):
        if row_sums[c] > 0:
            per_class[c] = confusion[c, c] / row_sums[c]
            evaluated.append(c)
    if not evaluated:
        raise ValueError("no test samples at all")
    ap = float(np.mean([per_class[c] for c in evaluated]))
    return MetricsReport(confusion, per_class, ap, evaluated)


def save_metrics_json(path, report: MetricsReport) -> None:
    payload = {
        "ap": report.ap,
        "per_class_precision": {
            str(c): (None if np.isnan(report.per_class[c]) else float(report.per_class[c]))
            for c in range(report.confusion.shape[0])
        },
        "excluded_classes": report.excluded_classes,
        "confusion": report.confusion.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_confusion_csv(path, report: MetricsReport) -> None:
    m = report.confusion.shape[0]
    lines = ["true_class," + ",".join(f"pred_{c}" for c in range(m))]
    for c in range(m):
        lines.append(f"{c}," + ",".join(str(int(v)) for v in report.confusion[c]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def code_matrix_image(codes: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Code dimensions x videos heatmap, videos sorted by class.

    With well-separated codes this renders as a block-diagonal pattern.
    Returns uint8 grayscale suitable for :func:`twostream3d.images.write_pgm`.
    """
    from .images import to_uint8

    order = np.argsort(np.asarray(labels), kind="stable")
    return to_uint8(np.asarray(codes)[order].T)


# ---------------------------------------------------------------------------
# stream evaluation pipeline
# ---------------------------------------------------------------------------


@dataclass
class StreamOutputs:
    """Per-video outputs of one stream on a train/test split."""

    train_codes: np.ndarray | None
    train_probs: np.ndarray
    train_labels: np.ndarray
    test_codes: np.ndarray | None
    test_probs: np.ndarray
    test_labels: np.ndarray
    train_ids: list[str]
    test_ids: list[str]
    classes: int


def video_outputs(net: Network, videos, t: int, crop_hw=None):
    """Mean clip probabilities and codes per video (center crops)."""
    from .data import center_offsets, split_clips

    probs_out, codes_out, labels, ids = [], [], [], []
    for vid in videos:
        clips = np.stack(split_clips(vid, t))
        if crop_hw is not None and crop_hw != clips.shape[-2:]:
            oy, ox = center_offsets(clips.shape[-2:], crop_hw)
            clips = clips[:, :, :, oy : oy + crop_hw[0], ox : ox + crop_hw[1]]
        fp = net.forward(clips)
        rep = aggregate_video(fp.probs, fp.codes)
        probs_out.append(rep.mean_probs)
        codes_out.append(rep.mean_code)
        labels.append(vid.label)
        ids.append(vid.id)
    codes = None if codes_out[0] is None else np.stack(codes_out)
    return np.stack(probs_out), codes, np.asarray(labels, dtype=np.int64), ids


def evaluate_stream(net: Network, train_videos, test_videos, t: int, crop_hw=None) -> StreamOutputs:
    train_probs, train_codes, train_labels, train_ids = video_outputs(net, train_videos, t, crop_hw)
    test_probs, test_codes, test_labels, test_ids = video_outputs(net, test_videos, t, crop_hw)
    return StreamOutputs(
        train_codes,
        train_probs,
        train_labels,
        test_codes,
        test_probs,
        test_labels,
        train_ids,
        test_ids,
        net.spec.classes,
    )


def classify_stream(outputs: StreamOutputs, method: str, cfg: FusionConfig | None = None) -> np.ndarray:
    """Per-video class predictions for one stream: softmax, knn, or kernel."""
    cfg = cfg or FusionConfig()
    if method == "softmax":
        return outputs.test_probs.argmax(axis=1)
    if outputs.test_codes is None or outputs.train_codes is None:
        raise ValueError(f"method {method!r} needs a code head")
    if method == "knn":
        return np.asarray(
            [
                knn_classify(c, outputs.train_codes, outputs.train_labels, cfg.knn_k)
                for c in outputs.test_codes
            ]
        )
    if method == "kernel":
        return np.asarray(
            [
                int(
                    np.argmax(
                        code_to_probs(c, outputs.train_codes, outputs.train_labels, cfg.knn_k, cfg.gamma)
                    )
                )
                for c in outputs.test_codes
            ]
        )
    raise ValueError(f"unknown classification method {method!r}")
