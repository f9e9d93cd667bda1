import numpy as np
import pytest

from twostream3d import data
from twostream3d.data import (
    ClipDataset,
    MotionProgram,
    SyntheticSpec,
    VideoRecord,
    generate_synthetic,
    resize_and_crop,
    split_clips,
    train_test_split,
)

# ---------------------------------------------------------------------------
# motion-template oracle: classifies a video from blob moments alone,
# independent of any network, so it certifies label recoverability
# ---------------------------------------------------------------------------


def blob_moments(frames: np.ndarray):
    """Per-frame intensity centroid (cx, cy) and isotropic spread sigma."""
    gray = frames.mean(axis=1).astype(np.float64)
    h, w = gray.shape[-2:]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cxs, cys, sig = [], [], []
    for img in gray:
        wgt = img - img.min()
        tot = wgt.sum()
        cx = float((wgt * xs).sum() / tot)
        cy = float((wgt * ys).sum() / tot)
        var = float((wgt * ((xs - cx) ** 2 + (ys - cy) ** 2)).sum() / tot)
        cxs.append(cx)
        cys.append(cy)
        sig.append(np.sqrt(var / 2.0))
    return np.asarray(cxs), np.asarray(cys), np.asarray(sig)


def motion_features(frames: np.ndarray) -> np.ndarray:
    cxs, cys, sig = blob_moments(frames)
    dcx, dcy, dsig = np.diff(cxs), np.diff(cys), np.diff(sig)
    return np.array([dcx.mean(), dcy.mean(), dcx.std(), dcy.std(), dsig.mean()])


def template_features(program: MotionProgram, spec: SyntheticSpec) -> np.ndarray:
    ts = np.arange(spec.frames_per_video, dtype=np.float64)
    centers = np.array([program.center_at(t) for t in ts])
    sig = np.array([program.sigma_at(t, spec.blob_sigma) for t in ts])
    dcx, dcy, dsig = np.diff(centers[:, 0]), np.diff(centers[:, 1]), np.diff(sig)
    return np.array([dcx.mean(), dcy.mean(), dcx.std(), dcy.std(), dsig.mean()])


def template_classify(frames: np.ndarray, spec: SyntheticSpec) -> int:
    feats = motion_features(frames)
    dists = [np.linalg.norm(feats - template_features(p, spec)) for p in spec.programs]
    return int(np.argmin(dists))


# ---------------------------------------------------------------------------


def small_video(n_frames=40, label=0, h=6, w=7, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(size=(n_frames, 3, h, w)).astype(np.float32)
    return VideoRecord(frames, label, f"v{seed}")


class TestSplitClips:
    def test_forty_frames_give_two_clips(self):
        vid = small_video(40)
        clips = split_clips(vid, t=16)
        assert len(clips) == 2
        assert clips[0].shape == (3, 16, 6, 7)

    def test_exact_length_gives_one_clip(self):
        vid = small_video(16)
        clips = split_clips(vid, t=16)
        assert len(clips) == 1
        np.testing.assert_array_equal(clips[0].transpose(1, 0, 2, 3), vid.frames)

    def test_too_short_errors(self):
        with pytest.raises(ValueError, match="shorter"):
            split_clips(small_video(15), t=16)

    def test_concatenation_reproduces_prefix(self):
        vid = small_video(37)
        clips = split_clips(vid, t=16)
        rebuilt = np.concatenate([c.transpose(1, 0, 2, 3) for c in clips])
        np.testing.assert_array_equal(rebuilt, vid.frames[:32])


class TestResizeAndCrop:
    def test_center_crop_offsets_at_reference_geometry(self):
        frames = np.zeros((2, 3, 128, 171), dtype=np.float32)
        frames[:, :, 8, 29] = 1.0  # lands at crop origin
        out = resize_and_crop(frames, (128, 171), (112, 112), mode="center")
        assert out.shape == (2, 3, 112, 112)
        assert out[0, 0, 0, 0] == 1.0

    def test_crop_equal_to_frame_is_identity(self):
        frames = np.random.default_rng(0).uniform(size=(3, 3, 20, 28)).astype(np.float32)
        out = resize_and_crop(frames, (20, 28), (20, 28), mode="center")
        np.testing.assert_array_equal(out, frames)

    def test_constant_color_stays_constant(self):
        frames = np.full((2, 3, 30, 40), 0.25, dtype=np.float32)
        out = resize_and_crop(frames, (24, 32), (20, 28), mode="center")
        np.testing.assert_allclose(out, 0.25, atol=1e-6)

    def test_random_mode_needs_rng_and_is_reproducible(self):
        frames = np.random.default_rng(1).uniform(size=(2, 3, 24, 32)).astype(np.float32)
        with pytest.raises(ValueError):
            resize_and_crop(frames, (24, 32), (20, 28), mode="random")
        a = resize_and_crop(frames, (24, 32), (20, 28), "random", np.random.default_rng(5))
        b = resize_and_crop(frames, (24, 32), (20, 28), "random", np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_crop_larger_than_frame(self):
        with pytest.raises(ValueError):
            resize_and_crop(np.zeros((1, 3, 10, 10)), (10, 10), (12, 12))

    def test_bilinear_downscale_preserves_range(self):
        frames = np.random.default_rng(2).uniform(size=(2, 3, 48, 64)).astype(np.float32)
        out = data.bilinear_resize(frames, (24, 32))
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestSyntheticGenerator:
    def test_deterministic_for_fixed_seed(self):
        spec = SyntheticSpec(classes=3, videos_per_class=2, seed=9)
        a = generate_synthetic(spec)
        b = generate_synthetic(SyntheticSpec(classes=3, videos_per_class=2, seed=9))
        assert len(a) == len(b) == 6
        for va, vb in zip(a, b):
            np.testing.assert_array_equal(va.frames, vb.frames)
            assert va.id == vb.id

    def test_class_counts_exact(self):
        spec = SyntheticSpec(classes=4, videos_per_class=3, seed=1)
        videos = generate_synthetic(spec)
        counts = np.bincount([v.label for v in videos], minlength=4)
        assert counts.tolist() == [3, 3, 3, 3]

    def test_values_in_unit_range(self):
        videos = generate_synthetic(SyntheticSpec(classes=2, videos_per_class=1, seed=2))
        for v in videos:
            assert v.frames.min() >= 0.0 and v.frames.max() <= 1.0

    def test_template_oracle_classifies_noiseless_perfectly(self):
        spec = SyntheticSpec(classes=6, videos_per_class=8, noise=0.0, seed=3)
        videos = generate_synthetic(spec)
        correct = sum(template_classify(v.frames, spec) == v.label for v in videos)
        assert correct == len(videos)

    def test_distinct_programs_required(self):
        prog = MotionProgram("translate", vx=1.0)
        with pytest.raises(ValueError, match="distinct"):
            SyntheticSpec(classes=2, programs=[prog, prog])

    def test_program_count_must_match_classes(self):
        with pytest.raises(ValueError):
            SyntheticSpec(classes=3, programs=[MotionProgram("translate", vx=1.0)])


class TestTrainTestSplit:
    def _corpus(self):
        return generate_synthetic(SyntheticSpec(classes=3, videos_per_class=10, seed=4))

    def test_split_sizes(self):
        train, test = train_test_split(self._corpus(), per_class_train=6, seed=0)
        assert len(train) == 18 and len(test) == 12
        for label in range(3):
            assert sum(v.label == label for v in train) == 6
            assert sum(v.label == label for v in test) == 4

    def test_disjoint(self):
        train, test = train_test_split(self._corpus(), per_class_train=6, seed=0)
        assert {v.id for v in train}.isdisjoint({v.id for v in test})

    def test_seed_stable(self):
        c = self._corpus()
        t1 = train_test_split(c, 6, seed=11)
        t2 = train_test_split(c, 6, seed=11)
        assert [v.id for v in t1[0]] == [v.id for v in t2[0]]

    def test_different_seeds_differ(self):
        c = self._corpus()
        a = train_test_split(c, 6, seed=0)[0]
        b = train_test_split(c, 6, seed=1)[0]
        assert [v.id for v in a] != [v.id for v in b]

    def test_insufficient_videos(self):
        with pytest.raises(ValueError, match="needs more"):
            train_test_split(self._corpus(), per_class_train=10, seed=0)


class TestDatasetIO:
    def test_roundtrip(self, tmp_path):
        videos = generate_synthetic(SyntheticSpec(classes=2, videos_per_class=2, seed=5))
        data.save_dataset(videos, tmp_path / "ds")
        back = data.load_dataset(tmp_path / "ds")
        assert len(back) == len(videos)
        for a, b in zip(videos, back):
            np.testing.assert_array_equal(a.frames, b.frames)
            assert (a.label, a.id) == (b.label, b.id)

    def test_manifest_format(self, tmp_path):
        videos = generate_synthetic(SyntheticSpec(classes=2, videos_per_class=1, seed=6))
        data.save_dataset(videos, tmp_path / "ds")
        lines = (tmp_path / "ds" / "manifest.txt").read_text().splitlines()
        assert len(lines) == 2
        rel, label, count = lines[0].split()
        assert rel.startswith("class_00/") and label == "0" and count == "17"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_dataset(tmp_path / "nothing")


class TestClipDataset:
    def _videos(self):
        return generate_synthetic(SyntheticSpec(classes=2, videos_per_class=3, seed=7))

    def test_from_videos_collects_all_clips(self):
        ds = ClipDataset.from_videos(self._videos(), t=8)
        # 17 frames -> 2 clips per video, 6 videos
        assert len(ds) == 12
        assert ds.clips.shape[1:] == (3, 8, 24, 32)
        assert ds.provenance[0] == ("c0_v000", 0)
        assert ds.provenance[1] == ("c0_v000", 1)

    def test_epoch_arrays_crop_shape(self):
        ds = ClipDataset.from_videos(self._videos(), t=8, crop_hw=(20, 28))
        clips, labels = ds.epoch_arrays(np.random.default_rng(0))
        assert clips.shape == (12, 3, 8, 20, 28)
        assert labels.shape == (12,)

    def test_no_crop_returns_clips_unchanged(self):
        ds = ClipDataset.from_videos(self._videos(), t=8)
        clips, _ = ds.epoch_arrays(np.random.default_rng(0))
        np.testing.assert_array_equal(clips, ds.clips)

    def test_center_cropped_deterministic(self):
        ds = ClipDataset.from_videos(self._videos(), t=8, crop_hw=(20, 28))
        a, _ = ds.center_cropped()
        b, _ = ds.center_cropped()
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a[0], ds.clips[0, :, :, 2:22, 2:30])

    def test_random_crop_offsets_are_uniform(self):
        """Chi-square over the 5x5 offset grid; 10k draws, p > 0.001."""
        rng = np.random.default_rng(13)
        h, w, ch, cw = 24, 32, 20, 28
        n = 10_000
        oys = rng.integers(0, h - ch + 1, size=n)
        oxs = rng.integers(0, w - cw + 1, size=n)
        cells = np.zeros((5, 5))
        np.add.at(cells, (oys, oxs), 1)
        expected = n / 25
        chi2 = ((cells - expected) ** 2 / expected).sum()
        # chi-square 0.999 quantile at 24 degrees of freedom
        assert chi2 < 51.1786
