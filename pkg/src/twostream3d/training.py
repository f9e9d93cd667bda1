"""Mini-batch SGD training, checkpointing, and the gradient-check harness.

The update rule is plain SGD with L2 weight decay and optional momentum:

    v <- momentum * v + grad + weight_decay * w
    w <- w - learning_rate * v

Weight decay is skipped for biases. The learning rate is constant; there
is no schedule. Batches are drawn from a seeded shuffle that is redrawn
every epoch, and a trailing partial batch is used as-is, so runs are
deterministic for a fixed seed and thread count.

Checkpoints are a single binary file:

    magic    8 bytes  b"CKPT3D01"
    version  u16
    spec     u32 length + canonical architecture string (utf-8)
    alloc    u8 flag; if set: u32 classes, u32 width, u32 r, r*u32 priority
    iter     u64
    params   one tensor blob per parameter, in layer order

Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .codes import CodeAllocation
from .netspec import parse_spec
from .network import LossBreakdown, Network, param_names

CKPT_MAGIC = b"CKPT3D01"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.0001
    batch_size: int = 30
    weight_decay: float = 0.0005
    max_iterations: int = 10000
    momentum: float = 0.0
    seed: int = 0
    alpha: float = 0.02

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be nonnegative, got {self.max_iterations}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")


def forward_backward(net: Network, clips: np.ndarray, labels: np.ndarray, cfg: TrainConfig):
    """One combined forward/backward pass; returns (losses, gradients)."""
    return net.loss_and_grads(clips, labels, cfg.alpha)


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    cfg: TrainConfig,
    velocity: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """In-place SGD update; returns the (possibly fresh) velocity dict."""
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {w.shape}")
        step = g if name.endswith(".b") else g + cfg.weight_decay * w
        v = velocity[name]
        v *= cfg.momentum
        v += step
        w -= cfg.learning_rate * v
    return velocity


@dataclass
class HistoryRow:
    iteration: int
    total: float
    softmax: float
    code: float


@dataclass
class TrainResult:
    net: Network
    history: list[HistoryRow]

    @property
    def final_loss(self) -> float:
        return self.history[-1].total if self.history else float("nan")


class ArrayDataset:
    """Minimal training set: a clip stack and labels, no augmentation."""

    def __init__(self, clips: np.ndarray, labels: np.ndarray):
        clips = np.asarray(clips)
        labels = np.asarray(labels, dtype=np.int64)
        if clips.ndim != 5:
            raise ValueError(f"expected (n, c, t, h, w) clips, got {clips.shape}")
        if labels.shape != (clips.shape[0],):
            raise ValueError(f"labels shape {labels.shape} does not match {clips.shape[0]} clips")
        if clips.shape[0] == 0:
            raise ValueError("empty dataset")
        self.clips = clips
        self.labels = labels

    def __len__(self):
        return self.clips.shape[0]

    def epoch_arrays(self, rng: np.random.Generator):
        return self.clips, self.labels


def train(net: Network, dataset, cfg: TrainConfig, callback=None) -> TrainResult:
    """Run ``cfg.max_iterations`` SGD steps over shuffled mini-batches.

    ``dataset`` is an object with ``epoch_arrays(rng) -> (clips, labels)``
    (re-invoked every epoch, so augmentation can redraw crops) or a plain
    ``(clips, labels)`` tuple. The network is updated in place and also
    returned inside the result.
    """
    if isinstance(dataset, tuple):
        dataset = ArrayDataset(*dataset)
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    m = net.spec.classes

    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    history: list[HistoryRow] = []
    iteration = 0
    while iteration < cfg.max_iterations:
        clips, labels = dataset.epoch_arrays(rng)
        if len(labels) == 0:
            raise ValueError("empty dataset")
        if labels.min() < 0 or labels.max() >= m:
            raise ValueError(f"label out of range for {m} classes")
        order = rng.permutation(len(labels))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            losses, grads = net.loss_and_grads(clips[idx], labels[idx], cfg.alpha)
            sgd_step(net.params, grads, cfg, velocity)
            history.append(HistoryRow(iteration, losses.total, losses.softmax, losses.code))
            if callback is not None:
                callback(iteration, losses)
            iteration += 1
            if iteration >= cfg.max_iterations:
                break
    return TrainResult(net, history)


# ---------------------------------------------------------------------------
# loss history CSV
# ---------------------------------------------------------------------------


def write_history(path, history: list[HistoryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "L", "L_c", "L_d"])
        for row in history:
            writer.writerow([row.iteration, repr(row.total), repr(row.softmax), repr(row.code)])


def read_history(path) -> list[HistoryRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["iteration", "L", "L_c", "L_d"]:
            raise ValueError(f"unexpected history header {header}")
        for rec in reader:
            rows.append(HistoryRow(int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3])))
    return rows


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, net: Network, iteration: int = 0) -> None:
    from .tensor import write_blob

    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        text = net.spec.to_string().encode("utf-8")
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        if net.alloc is not None:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<III", net.alloc.classes, net.alloc.width, net.alloc.remainder))
            for c in net.alloc.priority:
                fh.write(struct.pack("<I", c))
        else:
            fh.write(struct.pack("<B", 0))
        fh.write(struct.pack("<Q", iteration))
        for name in param_names(net.spec):
            write_blob(fh, net.params[name])


def load_checkpoint(path) -> tuple[Network, int]:
    from .tensor import read_blob

    with open(path, "rb") as fh:
        if fh.read(8) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (text_len,) = struct.unpack("<I", fh.read(4))
        spec = parse_spec(fh.read(text_len).decode("utf-8"))
        (has_alloc,) = struct.unpack("<B", fh.read(1))
        alloc = None
        if has_alloc:
            classes, width, r = struct.unpack("<III", fh.read(12))
            priority = struct.unpack(f"<{r}I", fh.read(4 * r)) if r else ()
            alloc = CodeAllocation(classes, width, tuple(priority))
        (iteration,) = struct.unpack("<Q", fh.read(8))
        params = {name: read_blob(fh) for name in param_names(spec)}
    return Network(spec, params, alloc), int(iteration)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    worst_rel_err: float
    coords_checked: int


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.worst_rel_err < self.tolerance for e in self.entries)

    @property
    def worst(self) -> float:
        return max(e.worst_rel_err for e in self.entries)

    def format(self) -> str:
        lines = [f"gradient check (tolerance {self.tolerance:g})"]
        for e in self.entries:
            status = "ok" if e.worst_rel_err < self.tolerance else "FAIL"
            lines.append(
                f"  {e.name:<12s} worst rel err {e.worst_rel_err:.3e} over {e.coords_checked} coords  {status}"
            )
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    # floored denominator: central differences in float64 carry ~1e-10
    # absolute noise, which must not register against the tolerance
    return abs(a - n) / max(abs(a) + abs(n), 1e-6)


def gradcheck(
    net: Network,
    clips: np.ndarray,
    labels: np.ndarray,
    alpha: float = 0.02,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    perturb: float = 0.0,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Checks up to ``max_coords`` seeded-sampled coordinates per parameter
    tensor, plus the assembled gradient at the feature vector the heads
    read (softmax branch + code branch). ``perturb`` adds a constant to
    every analytic value, turning the check into a negative control.

    Requires a float64 network; float32 has too little headroom for the
    1e-5 central step.
    """
    if net.dtype != np.float64:
        raise ValueError("gradient checking requires a float64 network")
    clips = np.asarray(clips, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)

    _, analytic = net.loss_and_grads(clips, labels, alpha)
    report = GradCheckReport(tolerance)
    streams = np.random.SeedSequence([seed, 0xC0DE]).spawn(len(net.params) + 1)

    for (name, param), ss in zip(net.params.items(), streams):
        rng = np.random.default_rng(ss)
        flat = param.reshape(-1)
        n_check = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=n_check, replace=False)
        worst = 0.0
        ga = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            lp = net.loss(clips, labels, alpha).total
            flat[i] = orig - step
            lm = net.loss(clips, labels, alpha).total
            flat[i] = orig
            numeric = (lp - lm) / (2 * step)
            worst = max(worst, _rel_err(ga[i] + perturb, numeric))
        report.entries.append(GradCheckEntry(name, worst, n_check))

    # assembled feature gradient: softmax branch + 2 alpha A^T(Ax - q)
    features = net.features(clips)
    _, _, dfeat = net.head_grads(features, labels, alpha)
    rng = np.random.default_rng(streams[-1])
    flat = features.reshape(-1)
    ga = dfeat.reshape(-1)
    n_check = min(max_coords, flat.size)
    coords = rng.choice(flat.size, size=n_check, replace=False)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        lp = net.head_loss(features, labels, alpha).total
        flat[i] = orig - step
        lm = net.head_loss(features, labels, alpha).total
        flat[i] = orig
        numeric = (lp - lm) / (2 * step)
        worst = max(worst, _rel_err(ga[i] + perturb, numeric))
    report.entries.append(GradCheckEntry("features", worst, n_check))
    return report
