import numpy as np
import pytest

from fewspikes.network import (ChecksumError, LayerSpec, Network, backward,
                               convtiny, forward, load_checkpoint, mlp2,
                               save_checkpoint, verify_equivalence,
                               _forward_surrogate)
from fewspikes.neurons import FsnConfig


def dense_net(units=(8, 3), input_shape=(3, 4, 4), seed=0, k=5):
    specs = [LayerSpec("flatten")]
    alphas = [1.0] + [3.0] * (len(units) - 1)
    for u, a in zip(units, alphas):
        specs.append(LayerSpec("dense", units=u, fsn=FsnConfig(a, k)))
    return Network.build(specs, input_shape, seed=seed)


class TestForward:
    def test_identity_net_on_grid_input(self):
        # identity weights + on-grid input pass through unchanged in both modes
        net = Network.build(
            [LayerSpec("flatten"), LayerSpec("dense", units=4, fsn=FsnConfig(1.0, 3))],
            (1, 2, 2), seed=0)
        net.weights[1][...] = np.eye(4)
        x = np.array([0.25, 0.5, 0.625, 0.875]).reshape(1, 1, 2, 2)
        for mode in ("surrogate", "spike"):
            out, _ = forward(net, x, mode=mode)
            assert np.allclose(out[0], [0.25, 0.5, 0.625, 0.875], atol=1e-15)

    def test_dual_mode_agreement_random_net(self):
        net = dense_net(units=(16, 8, 3), input_shape=(3, 5, 5), seed=1)
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, (100, 3, 5, 5))
        out_s, _ = forward(net, x, mode="surrogate")
        out_k, _ = forward(net, x, mode="spike")
        assert np.abs(out_s - out_k).max() < 1e-9

    def test_firing_rate_bounds(self):
        net = Network.build(convtiny((3, 16, 16), 3), (3, 16, 16), seed=3)
        x = np.random.default_rng(4).uniform(0, 1, (5, 3, 16, 16))
        _, stats = forward(net, x, mode="spike")
        assert 0.0 <= stats.firing_rate <= 1.0
        assert all(0.0 <= r <= 1.0 for r in stats.layer_rates())

    def test_spike_stats_match_across_modes(self):
        net = dense_net(seed=5)
        x = np.random.default_rng(6).uniform(0, 1, (8, 3, 4, 4))
        _, st_spike = forward(net, x, mode="spike")
        _, st_surr = forward(net, x, mode="surrogate")
        assert st_spike.spikes == st_surr.spikes
        assert st_spike.slots == st_surr.slots

    def test_argmax_stability_across_modes(self):
        net = Network.build(convtiny((3, 8, 8), 4), (3, 8, 8), seed=7)
        x = np.random.default_rng(8).uniform(0, 1, (50, 3, 8, 8))
        out_s, _ = forward(net, x, mode="surrogate")
        out_k, _ = forward(net, x, mode="spike")
        top2_gap = np.sort(out_s, axis=1)[:, -1] - np.sort(out_s, axis=1)[:, -2]
        stable = top2_gap > 2e-9
        assert np.array_equal(np.argmax(out_s[stable], axis=1),
                              np.argmax(out_k[stable], axis=1))

    def test_bad_input_shape(self):
        net = dense_net()
        with pytest.raises(ValueError, match="shape"):
            forward(net, np.zeros((1, 3, 5, 5)))

    def test_unknown_mode(self):
        net = dense_net()
        with pytest.raises(ValueError, match="mode"):
            forward(net, np.zeros((1, 3, 4, 4)), mode="hybrid")

    def test_pool_layer_equivalence(self):
        specs = [
            LayerSpec("conv2d", out_channels=4, kernel=3, stride=1, padding=1,
                      fsn=FsnConfig(1.0, 5)),
            LayerSpec("pool-avg", pool=2, fsn=FsnConfig(3.0, 5)),
            LayerSpec("flatten"),
            LayerSpec("dense", units=3, fsn=FsnConfig(3.0, 5)),
        ]
        net = Network.build(specs, (3, 8, 8), seed=9)
        x = np.random.default_rng(10).uniform(0, 1, (10, 3, 8, 8))
        out_s, _ = forward(net, x, mode="surrogate")
        out_k, _ = forward(net, x, mode="spike")
        assert np.abs(out_s - out_k).max() < 1e-9


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        net = dense_net(seed=11)
        x = np.random.default_rng(12).uniform(0, 1, (4, 3, 4, 4))
        _, _, cache = _forward_surrogate(net, x, "floor", want_cache=True)
        grads = backward(net, cache, np.zeros((4, 3)))
        for i, spec in enumerate(net.specs):
            if spec.weighted:
                assert np.all(grads[i][0] == 0) and np.all(grads[i][1] == 0)

    def test_single_weight_finite_difference(self):
        # one weight, relaxed activation, quadratic loss: FD is exact
        net = Network.build(
            [LayerSpec("flatten"), LayerSpec("dense", units=1, fsn=FsnConfig(1.0, 5))],
            (1, 1, 1), seed=13)
        x = np.array([[[[0.4]]]])

        def loss_of(w):
            net.weights[1][0, 0] = w
            out, _, _ = _forward_surrogate(net, x, "identity", want_cache=False)
            return float(out[0, 0]) ** 2

        w0 = 0.7
        net.weights[1][0, 0] = w0
        out, _, cache = _forward_surrogate(net, x, "identity", want_cache=True)
        grads = backward(net, cache, 2.0 * out)
        analytic = grads[1][0][0, 0]
        h = 1e-4
        fd = (loss_of(w0 + h) - loss_of(w0 - h)) / (2 * h)
        assert abs(analytic - fd) < 1e-6

    def test_clipped_low_input_zeroes_first_layer_grads(self):
        net = dense_net(seed=14)
        x = -np.ones((2, 3, 4, 4))  # entirely below the clip band
        _, _, cache = _forward_surrogate(net, x, "floor", want_cache=True)
        grads = backward(net, cache, np.ones((2, 3)))
        first_dense = 1  # flatten is layer 0
        assert np.all(grads[first_dense][0] == 0.0)
        # bias gradients still flow (bias is added after the activation)

    def test_backward_requires_cache(self):
        net = dense_net()
        with pytest.raises(ValueError, match="forward"):
            backward(net, None, np.zeros((1, 3)))

    def test_conv_backward_finite_difference(self):
        specs = [
            LayerSpec("conv2d", out_channels=2, kernel=3, stride=2, padding=1,
                      fsn=FsnConfig(1.0, 5)),
            LayerSpec("flatten"),
            LayerSpec("dense", units=2, fsn=FsnConfig(3.0, 5)),
        ]
        net = Network.build(specs, (1, 6, 6), seed=15)
        x = np.random.default_rng(16).uniform(0.05, 0.95, (3, 1, 6, 6))

        def total(w_flat_idx=None, delta=0.0):
            if w_flat_idx is not None:
                net.weights[0].reshape(-1)[w_flat_idx] += delta
            out, _, _ = _forward_surrogate(net, x, "identity", want_cache=False)
            if w_flat_idx is not None:
                net.weights[0].reshape(-1)[w_flat_idx] -= delta
            return float((out**2).sum())

        out, _, cache = _forward_surrogate(net, x, "identity", want_cache=True)
        grads = backward(net, cache, 2.0 * out)
        h = 1e-5
        rng = np.random.default_rng(17)
        for idx in rng.choice(net.weights[0].size, 6, replace=False):
            fd = (total(idx, h) - total(idx, -h)) / (2 * h)
            assert abs(grads[0][0].reshape(-1)[idx] - fd) < 1e-5


class TestInitialization:
    def test_preactivation_std_sane(self):
        for seed in range(3):
            net = Network.build(convtiny((3, 16, 16), 3), (3, 16, 16), seed=seed)
            x = np.random.default_rng(seed).uniform(0, 1, (20, 3, 16, 16))
            _, _, cache = _forward_surrogate(net, x, "floor", want_cache=True)
            # membrane inputs of the hidden weighted layers
            for entry in cache:
                if entry is None:
                    continue
                std = entry["x_pre"].std()
                if std > 0:  # skip the raw input block
                    assert 0.1 <= std <= 10.0

    def test_quantization_step_halves_with_k(self):
        a, b = FsnConfig(3.0, 5), FsnConfig(3.0, 6)
        assert b.x_min == a.x_min / 2


class TestVerifyEquivalence:
    def test_floor_mode_passes(self):
        net = Network.build(convtiny((3, 8, 8), 3), (3, 8, 8), seed=18)
        assert verify_equivalence(net, 20, seed=19) < 1e-9

    def test_round_mode_reports_nonzero(self):
        net = dense_net(seed=20)
        disc = verify_equivalence(net, 20, seed=21, rounding="round")
        assert disc >= 0.0  # reported, not asserted against the spike path

    def test_zero_samples(self):
        net = dense_net()
        assert verify_equivalence(net, 0) == 0.0


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        net = Network.build(convtiny((3, 8, 8), 3), (3, 8, 8), seed=22)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path, epoch=7)
        loaded, epoch = load_checkpoint(path)
        assert epoch == 7
        assert loaded.input_shape == net.input_shape
        # float32 storage: compare at float32 resolution
        for w1, w2 in zip(net.weights, loaded.weights):
            if w1 is not None:
                assert np.array_equal(w1.astype(np.float32), w2.astype(np.float32))
        x = np.random.default_rng(23).uniform(0, 1, (2, 3, 8, 8))
        out1, _ = forward(loaded, x)
        out2, _ = forward(loaded, x)
        assert np.array_equal(out1, out2)

    def test_corrupted_blob_raises_checksum_error(self, tmp_path):
        net = dense_net(seed=24)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        raw = bytearray(path.read_bytes())
        raw[-3] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError, match="checksum"):
            load_checkpoint(path)

    def test_mlp2_shapes(self):
        net = Network.build(mlp2((3, 8, 8), 5), (3, 8, 8))
        assert net.shapes[-1] == (5,)
        assert net.weights[1].shape == (128, 192)
