import numpy as np
import pytest

from twostream3d import codes
from twostream3d.codes import CodeAllocation


class TestCodeAllocation:
    def test_even_split_block_structure(self):
        alloc = CodeAllocation.uniform(3, 6)
        assert alloc.neurons_per_class == 2
        assert alloc.remainder == 0
        np.testing.assert_array_equal(alloc.target_code(1), [0, 0, 1, 1, 0, 0])

    def test_large_head_block_starts(self):
        # 12 classes over 4096 neurons: p = 341, class blocks at 341*c
        alloc = CodeAllocation.uniform(12, 4096)
        assert alloc.neurons_per_class == 341
        assert alloc.remainder == 4
        assert alloc.block_start(0) == 0
        assert alloc.block_start(1) == 341
        assert alloc.block_start(2) == 682
        q1 = alloc.target_code(1)
        assert q1[341] == 1 and q1[342] == 1 and q1[343] == 1
        assert q1[340] == 0 and q1[682] == 0

    def test_onehot_when_width_equals_classes(self):
        alloc = CodeAllocation.uniform(4, 4)
        for k in range(4):
            q = alloc.target_code(k)
            assert q.sum() == 1 and q[k] == 1

    def test_remainder_goes_to_priority_classes(self):
        alloc = CodeAllocation.uniform(3, 8)  # p=2, r=2, default priority (0, 1)
        assert alloc.priority == (0, 1)
        q0 = alloc.target_code(0)
        np.testing.assert_array_equal(q0, [1, 1, 0, 0, 0, 0, 1, 0])
        assert alloc.target_code(0).sum() == 3
        assert alloc.target_code(2).sum() == 2
        assert alloc.neuron_class(6) == 0
        assert alloc.neuron_class(7) == 1

    def test_priority_override(self):
        alloc = CodeAllocation.uniform(3, 8, priority=(2, 0))
        assert alloc.target_code(2).sum() == 3
        assert alloc.neuron_class(6) == 2

    def test_supports_partition_all_classes(self):
        for m, n in [(3, 6), (3, 8), (12, 4096), (5, 7)]:
            alloc = CodeAllocation.uniform(m, n)
            total = sum(alloc.target_code(k) for k in range(m))
            np.testing.assert_array_equal(total, np.ones(n))
            for a in range(m):
                for b in range(a + 1, m):
                    assert alloc.target_code(a) @ alloc.target_code(b) == 0

    def test_sum_is_p_or_p_plus_one(self):
        alloc = CodeAllocation.uniform(5, 23)  # p=4, r=3
        sums = {int(alloc.target_code(k).sum()) for k in range(5)}
        assert sums <= {4, 5}

    def test_label_out_of_range(self):
        alloc = CodeAllocation.uniform(3, 6)
        with pytest.raises(ValueError):
            alloc.target_code(3)
        with pytest.raises(ValueError):
            alloc.target_code(-1)

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            CodeAllocation(3, 8, priority=())  # wrong remainder length
        with pytest.raises(ValueError):
            CodeAllocation(3, 8, priority=(0, 0))  # duplicates
        with pytest.raises(ValueError):
            CodeAllocation(3, 8, priority=(0, 5))  # out of range
        with pytest.raises(ValueError):
            CodeAllocation(4, 2)  # width below class count


class TestCodeHead:
    def test_identity_weights(self):
        x = np.array([1.0, -2.0])
        np.testing.assert_array_equal(codes.predict_code(x, np.eye(2)), x)

    def test_zero_weights(self):
        np.testing.assert_array_equal(codes.predict_code(np.ones(3), np.zeros((4, 3))), np.zeros(4))

    def test_hand_example(self):
        out = codes.predict_code(np.array([1.0, 2.0]), np.array([[1.0, 1.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(out, [3.0, 2.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            codes.predict_code(np.ones(3), np.zeros((4, 2)))


class TestCodeLoss:
    def test_exact_match_is_zero(self):
        q = np.array([1.0, 0.0, 1.0])
        assert codes.code_loss(q.copy(), q) == 0.0

    def test_hand_example(self):
        assert codes.code_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(0.5)

    def test_zero_vectors(self):
        assert codes.code_loss(np.zeros(4), np.zeros(4)) == 0.0

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            a = rng.normal(size=6)
            b = rng.normal(size=6)
            val = codes.code_loss(a, b)
            assert val >= 0
            assert (val == 0) == bool(np.array_equal(a, b))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            codes.code_loss(np.zeros(3), np.zeros(4))


class TestCombinedLoss:
    def test_alpha_zero_gives_softmax_loss_only(self):
        probs = np.array([0.25, 0.75])
        want = -np.log(0.75)
        got = codes.combined_loss(probs, 1, np.ones(4), np.zeros(4), alpha=0.0)
        assert got == pytest.approx(want)

    def test_hand_example(self):
        # softmax loss 0, alpha 0.02, code loss 0.5 -> 0.01
        probs = np.array([1.0, 0.0])
        got = codes.combined_loss(probs, 0, np.array([0.5, 0.5]), np.array([1.0, 0.0]), alpha=0.02)
        assert got == pytest.approx(0.01)

    def test_both_zero(self):
        probs = np.array([1.0, 0.0])
        assert codes.combined_loss(probs, 0, np.zeros(2), np.zeros(2), 0.02) == pytest.approx(0.0)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            codes.combined_loss(np.array([0.5, 0.5]), 0, np.zeros(2), np.zeros(2), alpha=-1.0)


class TestCodeGradients:
    def test_zero_when_prediction_matches_target(self):
        x = np.array([1.0, 2.0])
        weights = np.array([[1.0, 0.0], [0.0, 1.0]])
        gw, gx = codes.code_gradients(x, weights, weights @ x, alpha=0.5)
        assert not gw.any() and not gx.any()

    def test_zero_when_alpha_zero(self):
        gw, gx = codes.code_gradients(np.ones(2), np.eye(2), np.zeros(2), alpha=0.0)
        assert not gw.any() and not gx.any()

    def test_hand_example(self):
        gw, gx = codes.code_gradients(
            np.array([1.0, 0.0]), np.eye(2), np.array([0.0, 1.0]), alpha=0.5
        )
        np.testing.assert_array_equal(gw, [[1.0, 0.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(gx, [1.0, -1.0])

    def test_matches_finite_differences(self):
        # the loss is quadratic, so central differences are exact for any
        # step; a large h suppresses float64 roundoff
        rng = np.random.default_rng(1)
        h = 1e-3
        for _ in range(20):
            n_out = int(rng.integers(2, 9))
            n_in = int(rng.integers(2, 9))
            alpha = float(rng.uniform(0.01, 2.0))
            x = rng.normal(size=n_in)
            w = rng.normal(size=(n_out, n_in))
            q = (rng.uniform(size=n_out) < 0.5).astype(np.float64)
            gw, gx = codes.code_gradients(x, w, q, alpha)

            def loss():
                return alpha * codes.code_loss(codes.predict_code(x, w), q)

            for arr, grad in ((x, gx), (w, gw)):
                flat = arr.reshape(-1)
                gflat = np.asarray(grad).reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = loss()
                    flat[i] = orig - h
                    fm = loss()
                    flat[i] = orig
                    num = (fp - fm) / (2 * h)
                    denom = max(abs(num), abs(gflat[i]), 1.0)
                    assert abs(num - gflat[i]) / denom < 1e-8

    def test_batch_form_averages_samples(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 5))
        w = rng.normal(size=(6, 5))
        q = (rng.uniform(size=(4, 6)) < 0.5).astype(np.float64)
        gw_batch, gx_batch = codes.batch_code_gradients(x, w, q, alpha=0.3)
        gw_mean = np.mean(
            [codes.code_gradients(x[i], w, q[i], 0.3)[0] for i in range(4)], axis=0
        )
        np.testing.assert_allclose(gw_batch, gw_mean, rtol=1e-12)
        for i in range(4):
            _, gx_i = codes.code_gradients(x[i], w, q[i], 0.3)
            np.testing.assert_allclose(gx_batch[i], gx_i / 4, rtol=1e-12)
