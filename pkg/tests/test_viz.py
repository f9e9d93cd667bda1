import numpy as np
import pytest

from twostream3d import viz
from twostream3d.images import read_ppm
from twostream3d.network import Network
from twostream3d.viz import VizConfig, visualize_neuron

TINY = "C(3,4,1)-P(1,2,1,2)-C(3,6,1)-P(2,2,2,2)-FC(16)-SM(3)-DC(9)"
SHAPE = (3, 4, 8, 8)


def tiny_net(seed=0):
    return Network.build(TINY, SHAPE, seed=seed, dtype=np.float32)


class TestVisualizeNeuron:
    def test_zero_steps_returns_seeded_init(self):
        net = tiny_net()
        cfg = VizConfig(neuron=2, steps=0, seed=5)
        result = visualize_neuron(net, cfg)
        rng = np.random.default_rng([5, 2, 0x71])
        expected = rng.uniform(0.4, 0.6, size=(1, *SHAPE)).astype(np.float32)
        np.testing.assert_array_equal(result.clip, expected[0])
        assert len(result.activations) == 1

    def test_linear_neuron_activation_strictly_increases(self):
        # trunk-free net: the code output is exactly A x, so one small
        # unclamped ascent step raises the activation by ~eta * ||A_j||^2
        net = Network.build("SM(2)-DC(4)", SHAPE, seed=1, dtype=np.float64)
        cfg = VizConfig(neuron=0, steps=1, step_size=0.01, l2_decay=0.0, seed=3)
        result = visualize_neuron(net, cfg)
        assert result.activations[1] > result.activations[0]
        row = net.params["code.w"][0]
        gain = result.activations[1] - result.activations[0]
        assert gain == pytest.approx(0.01 * float(row @ row), rel=1e-6)

    def test_ascent_increases_activation_on_conv_net(self):
        net = tiny_net(seed=2)
        cfg = VizConfig(neuron=1, steps=40, step_size=1.0, l2_decay=0.0, seed=6)
        result = visualize_neuron(net, cfg)
        assert result.activations[-1] > result.activations[0]

    def test_negative_step_control_decreases(self):
        net = tiny_net(seed=2)
        up = visualize_neuron(net, VizConfig(neuron=1, steps=20, step_size=0.5, l2_decay=0.0, seed=6))
        # descending the same gradient must lose activation
        x = np.random.default_rng([6, 1, 0x71]).uniform(0.4, 0.6, size=(1, *SHAPE)).astype(np.float32)
        act0, grad = net.code_activation_and_grad(x, 1)
        x_down = np.clip(x - 0.5 * grad, 0.0, 1.0).astype(np.float32)
        act1, _ = net.code_activation_and_grad(x_down, 1)
        assert act1[0] < act0[0]
        assert up.activations[-1] > up.activations[0]

    def test_clip_stays_in_unit_range(self):
        net = tiny_net(seed=4)
        result = visualize_neuron(net, VizConfig(neuron=0, steps=30, step_size=5.0, seed=7))
        assert result.clip.min() >= 0.0
        assert result.clip.max() <= 1.0

    def test_deterministic_for_seed(self):
        net = tiny_net(seed=4)
        a = visualize_neuron(net, VizConfig(neuron=3, steps=10, seed=8))
        b = visualize_neuron(net, VizConfig(neuron=3, steps=10, seed=8))
        np.testing.assert_array_equal(a.clip, b.clip)
        assert a.activations == b.activations

    def test_requires_code_head(self):
        bare = Network.build("C(3,4,1)-FC(8)-SM(3)", SHAPE, seed=0)
        with pytest.raises(ValueError, match="code head"):
            visualize_neuron(bare, VizConfig(neuron=0))

    def test_neuron_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            visualize_neuron(tiny_net(), VizConfig(neuron=9))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            VizConfig(neuron=0, steps=-1)
        with pytest.raises(ValueError):
            VizConfig(neuron=0, step_size=0.0)
        with pytest.raises(ValueError):
            VizConfig(neuron=0, l2_decay=-0.1)


class TestVizOutputs:
    def test_writes_frames_and_trace(self, tmp_path):
        net = tiny_net(seed=1)
        result = visualize_neuron(net, VizConfig(neuron=2, steps=3, seed=9))
        out = viz.write_viz_outputs(tmp_path, result, neuron=2)
        frames = sorted(out.glob("frame_*.ppm"))
        assert len(frames) == SHAPE[1]
        img = read_ppm(frames[0])
        assert img.shape == (3, SHAPE[2], SHAPE[3])
        trace_lines = (out / "activations.csv").read_text().splitlines()
        assert trace_lines[0] == "step,activation"
        assert len(trace_lines) == 1 + len(result.activations)
