"""Video dataset handling and the synthetic motion benchmark.

Videos are dense float32 tensors (frames, 3, h, w) with values in [0, 1]
plus an integer class label. They are split into fixed-length,
non-overlapping clips (trailing remainder dropped), optionally resized
bilinearly and cropped: random crops at train time (redrawn per clip per
epoch), the deterministic center crop at eval time. The same crop is
applied to every frame of a clip.

The synthetic generator renders one moving Gaussian blob per video. Each
class owns a distinct motion program (translation direction, oscillation,
or expansion); per-video nuisances (start position, speed factor, pixel
noise) are drawn from seeded streams, so generation is reproducible and
the label is recoverable from the motion alone.

On disk a dataset is one directory per class with one tensor blob per
video, indexed by a manifest listing relative path, label, and frame
count per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import load_tensor, save_tensor


@dataclass
class VideoRecord:
    frames: np.ndarray  # (frames, 3, h, w) float32 in [0, 1]
    label: int
    id: str

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"frames must be (f, 3, h, w), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("video needs at least one frame")
        if self.label < 0:
            raise ValueError(f"negative label {self.label}")


# ---------------------------------------------------------------------------
# clip splitting
# ---------------------------------------------------------------------------


def split_clips(video: VideoRecord, t: int = 16) -> list[np.ndarray]:
    """Non-overlapping (3, t, h, w) clips; the trailing remainder is dropped."""
    n = video.frames.shape[0]
    if n < t:
        raise ValueError(f"video {video.id!r} has {n} frames, shorter than clip length {t}")
    clips = []
    for i in range(n // t):
        chunk = video.frames[i * t : (i + 1) * t]
        clips.append(np.ascontiguousarray(chunk.transpose(1, 0, 2, 3)))
    return clips


# ---------------------------------------------------------------------------
# resize and crop
# ---------------------------------------------------------------------------


def bilinear_resize(frames: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize (..., h, w) bilinearly; exact identity when sizes match."""
    h, w = frames.shape[-2:]
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return frames.copy()
    src_y = np.linspace(0.0, h - 1.0, oh)
    src_x = np.linspace(0.0, w - 1.0, ow)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0).reshape(-1, 1)
    fx = (src_x - x0).reshape(1, -1)
    tl = frames[..., y0[:, None], x0[None, :]]
    tr = frames[..., y0[:, None], x1[None, :]]
    bl = frames[..., y1[:, None], x0[None, :]]
    br = frames[..., y1[:, None], x1[None, :]]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return (top * (1 - fy) + bot * fy).astype(frames.dtype)


def center_offsets(in_hw: tuple[int, int], crop_hw: tuple[int, int]) -> tuple[int, int]:
    return (in_hw[0] - crop_hw[0]) // 2, (in_hw[1] - crop_hw[1]) // 2


def crop_frames(frames: np.ndarray, crop_hw: tuple[int, int], offsets: tuple[int, int]) -> np.ndarray:
    h, w = frames.shape[-2:]
    ch, cw = crop_hw
    oy, ox = offsets
    if ch > h or cw > w:
        raise ValueError(f"crop {crop_hw} larger than frame {(h, w)}")
    if not (0 <= oy <= h - ch and 0 <= ox <= w - cw):
        raise ValueError(f"crop offsets {offsets} out of range for {(h, w)} minus {crop_hw}")
    return frames[..., oy : oy + ch, ox : ox + cw]


def resize_and_crop(
    frames: np.ndarray,
    resize_hw: tuple[int, int] = (128, 171),
    crop_hw: tuple[int, int] = (112, 112),
    mode: str = "center",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Bilinear resize then one spatial crop shared by all frames.

    ``mode`` is "center" (deterministic, floor offsets) or "random"
    (offsets drawn from ``rng``, one draw per call so every frame of a
    clip gets the identical window).
    """
    resized = bilinear_resize(frames, resize_hw)
    ch, cw = crop_hw
    h, w = resize_hw
    if ch > h or cw > w:
        raise ValueError(f"crop {crop_hw} larger than resized frame {resize_hw}")
    if mode == "center":
        offsets = center_offsets(resize_hw, crop_hw)
    elif mode == "random":
        if rng is None:
            raise ValueError("random crop mode needs a random generator")
        offsets = (int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1)))
    else:
        raise ValueError(f"unknown crop mode {mode!r}")
    return crop_frames(resized, crop_hw, offsets)


# ---------------------------------------------------------------------------
# synthetic videos
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionProgram:
    """Parametric blob motion; each class gets its own instance."""

    kind: str  # "translate" | "oscillate" | "expand"
    vx: float = 0.0
    vy: float = 0.0
    amplitude: float = 0.0
    period: float = 8.0
    grow: float = 0.0

    def center_at(self, t: float, speed: float = 1.0) -> tuple[float, float]:
        """Offset of the blob center from its start position at frame t."""
        if self.kind == "translate":
            return self.vx * speed * t, self.vy * speed * t
        if self.kind == "oscillate":
            return self.amplitude * math.sin(2 * math.pi * t / self.period) * speed, 0.0
        if self.kind == "expand":
            return 0.0, 0.0
        raise ValueError(f"unknown motion kind {self.kind!r}")

    def sigma_at(self, t: float, base: float, speed: float = 1.0) -> float:
        if self.kind == "expand":
            return base + self.grow * speed * t
        return base


def default_programs(classes: int) -> list[MotionProgram]:
    """Distinct motion programs: four translations, one oscillation, one expansion."""
    pool = [
        MotionProgram("translate", vx=0.8),
        MotionProgram("translate", vx=-0.8),
        MotionProgram("translate", vy=0.55),
        MotionProgram("translate", vy=-0.55),
        MotionProgram("oscillate", amplitude=2.5, period=8.0),
        MotionProgram("expand", grow=0.12),
        MotionProgram("translate", vx=0.6, vy=0.45),
        MotionProgram("translate", vx=-0.6, vy=-0.45),
    ]
    if classes > len(pool):
        raise ValueError(f"no more than {len(pool)} built-in motion programs, asked for {classes}")
    return pool[:classes]


@dataclass
class SyntheticSpec:
    classes: int = 6
    frame_hw: tuple[int, int] = (24, 32)
    frames_per_video: int = 17
    videos_per_class: int = 50
    noise: float = 0.02
    seed: int = 0
    blob_sigma: float = 2.2
    programs: list[MotionProgram] = field(default_factory=list)

    def __post_init__(self):
        if not self.programs:
            self.programs = default_programs(self.classes)
        if len(self.programs) != self.classes:
            raise ValueError(f"{len(self.programs)} programs for {self.classes} classes")
        if len(set(self.programs)) != len(self.programs):
            raise ValueError("motion programs must be distinct per class")
        if self.noise < 0:
            raise ValueError(f"negative noise level {self.noise}")


def _render_blob(h, w, cx, cy, sigma, peak, background):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    img = background + peak * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
    return img


def render_program_video(
    program: MotionProgram,
    spec: SyntheticSpec,
    start: tuple[float, float],
    speed: float = 1.0,
    peak: float = 0.9,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Frames (f, 3, h, w) for one blob following a motion program."""
    h, w = spec.frame_hw
    frames = np.empty((spec.frames_per_video, 3, h, w), dtype=np.float32)
    for t in range(spec.frames_per_video):
        dx, dy = program.center_at(t, speed)
        sigma = program.sigma_at(t, spec.blob_sigma, speed)
        img = _render_blob(h, w, start[0] + dx, start[1] + dy, sigma, peak, background=0.05)
        if rng is not None and spec.noise > 0:
            img = img + rng.normal(0.0, spec.noise, size=img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)[None].repeat(3, axis=0)
    return frames


def generate_synthetic(spec: SyntheticSpec) -> list[VideoRecord]:
    """Deterministic labeled corpus; the blob path encodes the class."""
    h, w = spec.frame_hw
    videos = []
    streams = np.random.SeedSequence(spec.seed).spawn(spec.classes * spec.videos_per_class)
    for label, program in enumerate(spec.programs):
        for i in range(spec.videos_per_class):
            rng = np.random.default_rng(streams[label * spec.videos_per_class + i])
            speed = float(rng.uniform(0.9, 1.1))
            peak = float(rng.uniform(0.8, 0.95))
            # start so the whole trajectory stays centered in the frame
            end_dx, end_dy = program.center_at(spec.frames_per_video - 1, speed)
            cx = w / 2 - end_dx / 2 + float(rng.uniform(-1.5, 1.5))
            cy = h / 2 - end_dy / 2 + float(rng.uniform(-1.5, 1.5))
            frames = render_program_video(program, spec, (cx, cy), speed, peak, rng)
            videos.append(VideoRecord(frames, label, f"c{label}_v{i:03d}"))
    return videos


def train_test_split(
    videos: list[VideoRecord], per_class_train: int = 30, seed: int = 0
) -> tuple[list[VideoRecord], list[VideoRecord]]:
    """Seeded per-class sampling without replacement into train and test."""
    by_class: dict[int, list[VideoRecord]] = {}
    for vid in videos:
        by_class.setdefault(vid.label, []).append(vid)
    train, test = [], []
    for label in sorted(by_class):
        group = by_class[label]
        if len(group) <= per_class_train:
            raise ValueError(
                f"class {label} has {len(group)} videos; needs more than {per_class_train}"
            )
        rng = np.random.default_rng([seed, label, 0x517])
        order = rng.permutation(len(group))
        train.extend(group[i] for i in order[:per_class_train])
        test.extend(group[i] for i in order[per_class_train:])
    return train, test


# ---------------------------------------------------------------------------
# on-disk dataset
# ---------------------------------------------------------------------------


def save_dataset(videos: list[VideoRecord], root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for vid in videos:
        rel = Path(f"class_{vid.label:02d}") / f"{vid.id}.t3d"
        (root / rel.parent).mkdir(exist_ok=True)
        save_tensor(root / rel, vid.frames.astype(np.float32))
        lines.append(f"{rel.as_posix()} {vid.label} {vid.frames.shape[0]}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset(root) -> list[VideoRecord]:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt under {root}")
    videos = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rel, label, count = line.split()
        frames = load_tensor(root / rel)
        if frames.shape[0] != int(count):
            raise ValueError(f"{rel}: manifest says {count} frames, blob has {frames.shape[0]}")
        videos.append(VideoRecord(frames, int(label), Path(rel).stem))
    return videos


# ---------------------------------------------------------------------------
# trainer adapter
# ---------------------------------------------------------------------------


class ClipDataset:
    """Clip stack with labels and provenance, optionally random-cropped per epoch."""

    def __init__(
        self,
        clips: np.ndarray,
        labels: np.ndarray,
        provenance: list[tuple[str, int]] | None = None,
        crop_hw: tuple[int, int] | None = None,
    ):
        self.clips = np.asarray(clips, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.clips.ndim != 5:
            raise ValueError(f"expected (n, 3, t, h, w) clips, got {self.clips.shape}")
        if self.labels.shape != (self.clips.shape[0],):
            raise ValueError("labels do not match clip count")
        self.provenance = provenance or [("", i) for i in range(len(self.labels))]
        self.crop_hw = crop_hw

    @classmethod
    def from_videos(cls, videos: list[VideoRecord], t: int, crop_hw: tuple[int, int] | None = None):
        clips, labels, provenance = [], [], []
        for vid in videos:
            for j, clip in enumerate(split_clips(vid, t)):
                clips.append(clip)
                labels.append(vid.label)
                provenance.append((vid.id, j))
        return cls(np.stack(clips), np.asarray(labels), provenance, crop_hw)

    def __len__(self):
        return self.clips.shape[0]

    def epoch_arrays(self, rng: np.random.Generator):
        """Clips for one epoch; random crop redrawn per clip when configured."""
        if self.crop_hw is None or self.crop_hw == self.clips.shape[-2:]:
            return self.clips, self.labels
        ch, cw = self.crop_hw
        n, _, _, h, w = self.clips.shape
        oys = rng.integers(0, h - ch + 1, size=n)
        oxs = rng.integers(0, w - cw + 1, size=n)
        out = np.empty(self.clips.shape[:3] + (ch, cw), dtype=self.clips.dtype)
        for i in range(n):
            out[i] = self.clips[i, :, :, oys[i] : oys[i] + ch, oxs[i] : oxs[i] + cw]
        return out, self.labels

    def center_cropped(self):
        """Deterministic center-crop view used at eval time."""
        if self.crop_hw is None or self.crop_hw == self.clips.shape[-2:]:
            return self.clips, self.labels
        oy, ox = center_offsets(self.clips.shape[-2:], self.crop_hw)
        ch, cw = self.crop_hw
        return self.clips[:, :, :, oy : oy + ch, ox : ox + cw], self.labels
