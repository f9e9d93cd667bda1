import numpy as np
import pytest

from twostream3d import flow


def periodic_texture(h, w, shift_x=0.0, periods=(14, 10)):
    """Smooth 0..255 texture, periodic over the frame, shiftable in x."""
    y, x = np.mgrid[0:h, 0:w].astype(float)
    x = x - shift_x
    val = (np.sin(2 * np.pi * x / periods[0]) + np.cos(2 * np.pi * y / periods[1])) / 2
    return (val * 0.5 + 0.5) * 255.0


def gaussian_blob(h, w, cx, cy, sigma=2.5, peak=200.0):
    y, x = np.mgrid[0:h, 0:w].astype(float)
    return peak * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))


class TestEstimateFlow:
    def test_identical_frames_give_exact_zero(self):
        a = gaussian_blob(24, 32, 15.0, 12.0)
        f = flow.estimate_flow(a, a)
        assert not f.u.any()
        assert not f.v.any()

    def test_uniform_frames_give_zero(self):
        a = np.full((12, 12), 7.0)
        f = flow.estimate_flow(a, a.copy())
        assert not f.u.any() and not f.v.any()

    def test_blob_unit_translation_recovered(self):
        a = gaussian_blob(24, 32, 15.0, 12.0)
        b = gaussian_blob(24, 32, 16.0, 12.0)
        f = flow.estimate_flow(a, b)
        region = (slice(8, 17), slice(11, 21))  # around the blob
        assert 0.5 <= f.u[region].mean() <= 1.5
        assert abs(f.v[region]).mean() < 0.25

    def test_translation_consistency(self):
        """Shifted copies of a frame pair yield the same interior flow."""
        h, w, margin = 80, 112, 32
        a = periodic_texture(h, w)
        b = periodic_texture(h, w, shift_x=1.0)
        f1 = flow.estimate_flow(a, b)
        dy, dx = 6, 10
        f2 = flow.estimate_flow(
            np.roll(a, (dy, dx), axis=(0, 1)), np.roll(b, (dy, dx), axis=(0, 1))
        )
        u2 = np.roll(f2.u, (-dy, -dx), axis=(0, 1))
        v2 = np.roll(f2.v, (-dy, -dx), axis=(0, 1))
        core = (slice(margin, -margin), slice(margin, -margin))
        assert np.abs(f1.u[core] - u2[core]).max() < 1e-6
        assert np.abs(f1.v[core] - v2[core]).max() < 1e-6

    def test_deterministic(self):
        a = periodic_texture(24, 32)
        b = periodic_texture(24, 32, shift_x=0.7)
        f1 = flow.estimate_flow(a, b)
        f2 = flow.estimate_flow(a, b)
        np.testing.assert_array_equal(f1.u, f2.u)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            flow.estimate_flow(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_degenerate_frames(self):
        with pytest.raises(ValueError):
            flow.estimate_flow(np.zeros((1, 1)), np.zeros((1, 1)))

    def test_flow_is_finite(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 255, size=(16, 16))
        b = rng.uniform(0, 255, size=(16, 16))
        f = flow.estimate_flow(a, b)
        assert np.all(np.isfinite(f.u)) and np.all(np.isfinite(f.v))


class TestEncodeFlowImage:
    def test_zero_flow_encodes_to_center(self):
        f = flow.FlowField(np.zeros((4, 4)), np.zeros((4, 4)))
        img = flow.encode_flow_image(f)
        assert img.shape == (3, 4, 4)
        assert (img[0] == 128).all()
        assert (img[1] == 128).all()
        assert (img[2] == 0).all()

    def test_hand_example(self):
        f = flow.FlowField(np.full((1, 1), 10.0), np.full((1, 1), -10.0))
        img = flow.encode_flow_image(f, scale=1.0)
        assert img[:, 0, 0].tolist() == [138, 118, 14]  # round(14.142) = 14

    def test_clamping(self):
        f = flow.FlowField(np.full((1, 1), 200.0), np.zeros((1, 1)))
        img = flow.encode_flow_image(f, scale=8.0)
        assert img[0, 0, 0] == 255

    def test_monotone_where_unclamped(self):
        us = np.linspace(-10, 10, 33)
        f = flow.FlowField(us.reshape(1, -1), np.zeros((1, 33)))
        img = flow.encode_flow_image(f, scale=8.0)
        ch0 = img[0, 0].astype(int)
        assert (np.diff(ch0) >= 0).all()

    def test_decode_quantization_bound(self):
        rng = np.random.default_rng(1)
        scale = 8.0
        for _ in range(50):
            u = rng.uniform(-10, 10, size=(6, 7))
            v = rng.uniform(-10, 10, size=(6, 7))
            img = flow.encode_flow_image(flow.FlowField(u, v), scale)
            back = flow.decode_flow_image(img, scale)
            unclamped_u = np.abs(128 + scale * u - np.clip(128 + scale * u, 0, 255)) == 0
            unclamped_v = np.abs(128 + scale * v - np.clip(128 + scale * v, 0, 255)) == 0
            assert np.abs(back.u - u)[unclamped_u].max() <= 0.5 / scale + 1e-12
            assert np.abs(back.v - v)[unclamped_v].max() <= 0.5 / scale + 1e-12

    def test_rejects_bad_scale(self):
        f = flow.FlowField(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            flow.encode_flow_image(f, scale=0.0)


class TestVideoToFlowClip:
    def _video(self, n_frames, speed=1.0, h=24, w=32):
        frames = np.stack(
            [np.repeat(periodic_texture(h, w, shift_x=i * speed)[None] / 255.0, 3, axis=0) for i in range(n_frames)]
        )
        return frames

    def test_frame_count_contract(self):
        clip = flow.video_to_flow_clip(self._video(17))
        assert clip.shape == (3, 16, 24, 32)

    def test_two_identical_frames(self):
        frames = np.repeat(self._video(1), 2, axis=0)
        clip = flow.video_to_flow_clip(frames)
        assert clip.shape[1] == 1
        np.testing.assert_allclose(clip[0], 128 / 255, atol=1e-7)
        np.testing.assert_allclose(clip[1], 128 / 255, atol=1e-7)
        np.testing.assert_allclose(clip[2], 0.0, atol=1e-7)

    def test_constant_velocity_gives_stable_flow_images(self):
        clip = flow.video_to_flow_clip(self._video(6, speed=0.8))
        as_bytes = np.rint(clip * 255).astype(int)
        for i in range(as_bytes.shape[1] - 1):
            assert np.abs(as_bytes[:, i + 1] - as_bytes[:, i]).max() <= 2

    def test_values_in_unit_range(self):
        clip = flow.video_to_flow_clip(self._video(4))
        assert clip.min() >= 0.0 and clip.max() <= 1.0

    def test_too_few_frames(self):
        with pytest.raises(ValueError):
            flow.video_to_flow_clip(self._video(1))

    def test_grayscale_conversion_shape(self):
        gray = flow.frames_to_grayscale(self._video(3))
        assert gray.shape == (3, 24, 32)
        assert gray.max() <= 255.0
