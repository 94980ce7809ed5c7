import numpy as np
import pytest

from spikepin.lif import LifLayerParams, LifNetwork, forward
from spikepin.encoding import SpikeRaster
from spikepin.training import (
    AdamState,
    EncodedDataset,
    TrainConfig,
    adam_step,
    backward_bptt,
    backward_from_counts,
    batch_loss_and_count_grad,
    forward_batch,
    loss_bce,
    smooth_spike,
    surrogate_spike_grad,
    train,
    write_epoch_csv,
)


def random_net(sizes, rng, n_steps, scale=1.0, dtype=np.float64):
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out)) * scale
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        layers.append(LifLayerParams(w))
    return LifNetwork(layers, n_steps=n_steps)


def random_steps(rng, batch, channels, n_steps, p_active=0.5):
    steps = rng.integers(0, n_steps, size=(batch, channels)).astype(np.int16)
    silent = rng.random((batch, channels)) >= p_active
    steps[silent] = -1
    return steps


class TestSurrogate:
    def test_maximum_at_threshold(self):
        assert surrogate_spike_grad(0.0, 25.0) == 1.0

    def test_vanishes_far_from_threshold(self):
        assert surrogate_spike_grad(1e6, 25.0) < 1e-12
        assert surrogate_spike_grad(-1e6, 25.0) < 1e-12

    def test_hand_value(self):
        # k=25, |u - theta| = 0.04 -> 1/(1+1)^2 = 0.25
        assert surrogate_spike_grad(0.04, 25.0) == pytest.approx(0.25)

    def test_is_derivative_of_smooth_spike(self):
        xs = np.linspace(-0.4, 0.4, 31)
        h = 1e-7
        fd = (smooth_spike(xs + h, 25.0) - smooth_spike(xs - h, 25.0)) / (2 * h)
        assert np.allclose(fd, surrogate_spike_grad(xs, 25.0), atol=1e-5)


class TestLossBce:
    def test_all_out_spikes_with_out_label(self):
        # rates (0, 1) -> sigmoid(1) ~ 0.731, loss ~ 0.313
        loss = loss_bce((0, 100), 1, 100)
        assert loss == pytest.approx(0.31326168751822286, rel=1e-9)

    def test_tied_counts_give_ln2(self):
        for label in (0, 1):
            assert loss_bce((7, 7), label, 100) == pytest.approx(np.log(2))

    def test_clamp_keeps_loss_finite(self):
        loss = loss_bce((0, 100000), 0, 10)
        assert np.isfinite(loss)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        counts = rng.integers(0, 50, size=(16, 2)).astype(float)
        labels = rng.integers(0, 2, size=16).astype(np.uint8)
        batch_loss, _ = batch_loss_and_count_grad(counts, labels, 100)
        scalar = np.mean([loss_bce(c, int(y), 100) for c, y in zip(counts, labels)])
        assert batch_loss == pytest.approx(scalar, rel=1e-12)


class TestAdam:
    def test_zero_gradient_keeps_weights(self):
        w = [np.ones((3, 2), dtype=np.float32)]
        state = AdamState(m=[np.zeros((3, 2), np.float32)], v=[np.zeros((3, 2), np.float32)])
        adam_step(w, [np.zeros((3, 2))], state, lr=0.1)
        assert np.array_equal(w[0], np.ones((3, 2), dtype=np.float32))

    def test_first_step_magnitude(self):
        w = [np.zeros((2, 2), dtype=np.float64)]
        g = [np.array([[0.3, -0.7], [2.0, -0.01]])]
        state = AdamState(m=[np.zeros((2, 2))], v=[np.zeros((2, 2))])
        adam_step(w, g, state, lr=0.001)
        assert np.allclose(np.abs(w[0]), 0.001, rtol=1e-4)
        assert np.all(np.sign(w[0]) == -np.sign(g[0]))

    def test_symmetry(self):
        w = [np.zeros(4).reshape(2, 2)]
        g = [np.full((2, 2), 0.5)]
        state = AdamState(m=[np.zeros((2, 2))], v=[np.zeros((2, 2))])
        adam_step(w, g, state, lr=0.01)
        assert len(np.unique(w[0])) == 1


class TestGradientOracle:
    """BPTT on the smooth-forward network vs central finite differences."""

    def loss_of(self, net, steps, labels, slope):
        trace = forward_batch(steps, net, slope=slope, smooth=True, record=False)
        loss, _ = batch_loss_and_count_grad(trace.counts, labels, net.n_steps)
        return loss

    def bptt_grads(self, net, steps, labels, slope):
        trace = forward_batch(steps, net, slope=slope, smooth=True)
        _, dcounts = batch_loss_and_count_grad(trace.counts, labels, net.n_steps)
        return backward_from_counts(trace, dcounts, net, slope)

    def fd_grads(self, net, steps, labels, slope, h=1e-4):
        grads = []
        for layer in net.layers:
            g = np.zeros_like(layer.weights)
            flat = layer.weights.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = self.loss_of(net, steps, labels, slope)
                flat[i] = orig - h
                lm = self.loss_of(net, steps, labels, slope)
                flat[i] = orig
                g.ravel()[i] = (lp - lm) / (2 * h)
            grads.append(g)
        return grads

    @pytest.mark.parametrize("sizes", [[10, 4, 2], [10, 4, 3, 2]])
    @pytest.mark.parametrize("reset", ["zero", "subtract"])
    def test_bptt_matches_finite_differences(self, sizes, reset):
        rng = np.random.default_rng(hash((tuple(sizes), reset)) % 2**32)
        for _ in range(3):
            net = random_net(sizes, rng, n_steps=10, scale=3.0)
            for layer in net.layers:
                layer.reset = reset
            steps = random_steps(rng, 4, sizes[0], 10)
            labels = rng.integers(0, 2, size=4).astype(np.uint8)
            analytic = self.bptt_grads(net, steps, labels, 25.0)
            numeric = self.fd_grads(net, steps, labels, 25.0)
            for a, n in zip(analytic, numeric):
                scale = max(np.abs(n).max(), 1e-8)
                assert np.abs(a - n).max() / scale < 1e-3


class TestBackwardProperties:
    def test_zero_input_zero_gradients(self):
        rng = np.random.default_rng(0)
        net = random_net([6, 4, 2], rng, n_steps=10)
        raster = SpikeRaster(matrix=np.zeros((6, 10), dtype=bool))
        trace = forward(raster, net)
        grads = backward_bptt(trace, 1, net, TrainConfig())
        for g in grads:
            assert np.all(g == 0.0)

    def test_gradient_linearity(self):
        rng = np.random.default_rng(1)
        net = random_net([6, 4, 2], rng, n_steps=10, scale=4.0)
        steps = random_steps(rng, 3, 6, 10)
        labels = np.array([1, 0, 1], dtype=np.uint8)
        trace = forward_batch(steps, net)
        _, dcounts = batch_loss_and_count_grad(trace.counts, labels, 10)
        g1 = backward_from_counts(trace, dcounts, net, 25.0)
        g2 = backward_from_counts(trace, 2.0 * dcounts, net, 25.0)
        for a, b in zip(g1, g2):
            assert np.allclose(2.0 * a, b, rtol=1e-12)

    def test_single_frame_matches_batch_of_one(self):
        rng = np.random.default_rng(2)
        net = random_net([6, 4, 2], rng, n_steps=12, scale=4.0, dtype=np.float32)
        steps = random_steps(rng, 1, 6, 12)
        matrix = np.zeros((6, 12), dtype=bool)
        for c in range(6):
            if steps[0, c] >= 0:
                matrix[c, steps[0, c]] = True
        trace_single = forward(SpikeRaster(matrix=matrix), net)
        g_single = backward_bptt(trace_single, 1, net, TrainConfig())

        trace_batch = forward_batch(steps, net)
        _, dcounts = batch_loss_and_count_grad(
            trace_batch.counts, np.array([1], np.uint8), 12
        )
        g_batch = backward_from_counts(trace_batch, dcounts, net, 25.0)
        for a, b in zip(g_single, g_batch):
            assert np.allclose(a, b, atol=1e-6)


def separable_dataset(rng, n=120, n_steps=10):
    """Channel 0 fires early for pin_out, channel 1 for pin_ok."""
    labels = (rng.random(n) < 0.5).astype(np.uint8)
    steps = np.full((n, 2), -1, dtype=np.int16)
    for i, y in enumerate(labels):
        steps[i, 0 if y else 1] = 0
        # distractor channel fires late sometimes
        if rng.random() < 0.3:
            steps[i, 1 if y else 0] = n_steps - 1
    return EncodedDataset(steps=steps, labels=labels, ids=[str(i) for i in range(n)], n_steps=n_steps)


class TestTrainLoop:
    def test_zero_epochs_returns_initial_state(self, tmp_path):
        rng = np.random.default_rng(0)
        net = random_net([2, 4, 2], rng, n_steps=10, dtype=np.float32)
        before = net.content_hash()
        data = separable_dataset(np.random.default_rng(1))
        cfg = TrainConfig(epochs=0, seed=5)
        net, reports = train(data, data, net, cfg, checkpoint_path=tmp_path / "ckpt.json")
        assert reports == []
        assert net.content_hash() == before
        loaded, _ = LifNetwork.load(tmp_path / "ckpt.json")
        assert loaded.content_hash() == before

    def test_lr_schedule_is_exact(self):
        rng = np.random.default_rng(3)
        net = random_net([2, 4, 2], rng, n_steps=10, scale=2.0, dtype=np.float32)
        data = separable_dataset(np.random.default_rng(4), n=24)
        cfg = TrainConfig(lr=0.001, lr_decay=0.95, epochs=11, batch_size=8, seed=0)
        _, reports = train(data, data, net, cfg)
        assert reports[0].lr == pytest.approx(0.001, rel=1e-12)
        assert reports[1].lr == pytest.approx(0.00095, rel=1e-12)
        assert reports[10].lr == pytest.approx(0.001 * 0.95**10, rel=1e-12)

    def test_learns_separable_toy_within_20_epochs(self):
        rng = np.random.default_rng(10)
        net = random_net([2, 8, 2], rng, n_steps=10, scale=2.0, dtype=np.float32)
        data = separable_dataset(np.random.default_rng(11), n=120)
        cfg = TrainConfig(lr=0.02, epochs=20, batch_size=16, seed=7)
        net, reports = train(data, data, net, cfg)
        from spikepin.training import evaluate_encoded

        _, acc, _ = evaluate_encoded(data, net)
        assert acc >= 0.99

    def test_seeded_determinism(self, tmp_path):
        results = []
        for run in range(2):
            rng = np.random.default_rng(20)
            net = random_net([2, 4, 2], rng, n_steps=10, scale=2.0, dtype=np.float32)
            data = separable_dataset(np.random.default_rng(21), n=48)
            cfg = TrainConfig(lr=0.01, epochs=5, batch_size=8, seed=3)
            net, reports = train(data, data, net, cfg)
            results.append((net.content_hash(), [r.train_loss for r in reports]))
        assert results[0][0] == results[1][0]
        assert results[0][1] == results[1][1]

    def test_epoch_csv(self, tmp_path):
        rng = np.random.default_rng(30)
        net = random_net([2, 4, 2], rng, n_steps=10, scale=2.0, dtype=np.float32)
        data = separable_dataset(np.random.default_rng(31), n=24)
        cfg = TrainConfig(lr=0.01, epochs=2, batch_size=8, seed=1)
        _, reports = train(data, data, net, cfg)
        path = tmp_path / "epochs.csv"
        write_epoch_csv(reports, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("epoch,")


class TestTrainConfigValidation:
    def test_rejects_bad_lr(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)

    def test_rejects_bad_decay(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_decay=1.5)

    def test_rejects_negative_epochs(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
