
import numpy as np
import pytest

from looptopo.data import StandardizationStats
from looptopo.errors import (ChecksumError, FormatVersionError,
                             TrainingDivergedError, ValidationError)
from looptopo.mlp import (AdamState, MlpConfig, TrainConfig,
                          adam_step, eval_loss, forward, init_mlp,
                          load_checkpoint, loss_and_grad,
                          sample_dropout_masks, save_checkpoint,
                          save_history_csv, train)


def tiny_model(seed=0, dtype="float64", **kw):
    cfg = MlpConfig(input_dim=kw.pop("input_dim", 8),
                    hidden_widths=kw.pop("hidden_widths", (16, 16)),
                    output_dim=kw.pop("output_dim", 4),
                    seed=seed, dtype=dtype, **kw)
    return init_mlp(cfg)


class TestInit:
    def test_seed_determinism(self):
        a, b = tiny_model(seed=3), tiny_model(seed=3)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_he_scaling(self):
        # std of a 256 x 256 layer should sit within 5% of sqrt(2/256)
        cfg = MlpConfig(input_dim=256, hidden_widths=(256,), output_dim=1,
                        seed=0, dtype="float64")
        m = init_mlp(cfg)
        measured = m.weights[0].std()
        assert abs(measured - 0.08838834764831845) / 0.08838834764831845 < 0.05

    def test_biases_zero(self):
        m = tiny_model()
        for b in m.biases:
            assert b is not None and np.all(b == 0)

    def test_zero_hidden_layers_rejected(self):
        with pytest.raises(ValidationError):
            init_mlp(MlpConfig(input_dim=4, hidden_widths=(), output_dim=2))

    def test_bad_dropout_rejected(self):
        with pytest.raises(ValidationError):
            init_mlp(MlpConfig(hidden_widths=(8,), dropout_rate=1.0))

    def test_final_bias_flag(self):
        m = init_mlp(MlpConfig(input_dim=4, hidden_widths=(8,), output_dim=2,
                               final_bias=False))
        assert m.biases[-1] is None


class TestForward:
    def test_zero_weights_give_final_bias(self):
        m = tiny_model()
        for w in m.weights:
            w[:] = 0.0
        m.biases[-1][:] = [1.0, -2.0, 3.0, 4.0]
        np.testing.assert_array_equal(forward(m, np.ones(8)), [1.0, -2.0, 3.0, 4.0])

    def test_no_dropout_train_equals_eval(self):
        m = tiny_model()
        x = np.random.default_rng(1).normal(size=(5, 8))
        np.testing.assert_array_equal(
            forward(m, x, mode="train", rng=np.random.default_rng(0)),
            forward(m, x, mode="eval"))

    def test_dead_unit_contributes_nothing(self):
        m = tiny_model(seed=2)
        x = np.random.default_rng(2).normal(size=8)
        pre = x @ m.weights[0] + m.biases[0]
        dead = int(np.argmin(pre))
        assert pre[dead] < 0
        base = forward(m, x)
        # rewiring a dead unit downstream cannot change the output
        m.weights[1][dead, :] *= 100.0
        np.testing.assert_array_equal(forward(m, x), base)
        # a sign-flipped duplicate with zero downstream weight is inert too
        m2 = tiny_model(seed=2)
        w0 = np.concatenate([m2.weights[0], -m2.weights[0][:, dead:dead + 1]], axis=1)
        b0 = np.concatenate([m2.biases[0], [-m2.biases[0][dead]]])
        w1 = np.concatenate([m2.weights[1], np.zeros((1, 16))], axis=0)
        m2.weights[0], m2.biases[0], m2.weights[1] = w0, b0, w1
        m2.config = MlpConfig(input_dim=8, hidden_widths=(17, 16), output_dim=4,
                              seed=2, dtype="float64")
        np.testing.assert_array_equal(forward(m2, x), base)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            forward(tiny_model(), np.ones(9))

    def test_dropout_expectation_matches_eval(self):
        # positive weights + positive inputs keep every unit active for every
        # mask, so inverted dropout is exactly mean-preserving; 1e4 draws
        # leave only Monte-Carlo noise
        cfg = MlpConfig(input_dim=6, hidden_widths=(16, 16), output_dim=2,
                        dropout_rate=0.1, dtype="float64", seed=7)
        m = init_mlp(cfg)
        for i in range(m.n_layers):
            m.weights[i] = np.abs(m.weights[i])
        x = np.abs(np.random.default_rng(0).normal(size=6))
        reference = forward(m, x, mode="eval")
        rng = np.random.default_rng(42)
        total = np.zeros(2)
        n = 10000
        for _ in range(n):
            total += forward(m, x, mode="train", rng=rng)
        np.testing.assert_allclose(total / n, reference, rtol=0.01)

    def test_dropout_masks_shapes(self):
        cfg = MlpConfig(input_dim=6, hidden_widths=(16, 8), output_dim=2,
                        dropout_rate=0.5, seed=0)
        m = init_mlp(cfg)
        masks = sample_dropout_masks(m, 4, np.random.default_rng(0))
        assert [mk.shape for mk in masks] == [(4, 6), (4, 16)]


class TestGradients:
    def test_zero_loss_zero_gradients_at_fit(self):
        m = tiny_model(seed=4)
        x = np.random.default_rng(4).normal(size=(6, 8))
        y = forward(m, x)
        loss, grads = loss_and_grad(m, x, y, mode="eval")
        assert loss == 0.0
        for g in grads["weights"] + [g for g in grads["biases"] if g is not None]:
            assert np.all(g == 0)

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference_agreement(self, seed):
        m = tiny_model(seed=seed)
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(8, 8))
        y = rng.normal(size=(8, 4))
        _, grads = loss_and_grad(m, x, y, mode="eval")
        h = 1e-5
        for li in range(m.n_layers):
            w = m.weights[li]
            flat = w.reshape(-1)
            probe = np.linspace(0, flat.size - 1, 7).astype(int)
            for k in probe:
                orig = flat[k]
                flat[k] = orig + h
                lp, _ = loss_and_grad(m, x, y, mode="eval")
                flat[k] = orig - h
                lm, _ = loss_and_grad(m, x, y, mode="eval")
                flat[k] = orig
                fd = (lp - lm) / (2 * h)
                bp = grads["weights"][li].reshape(-1)[k]
                assert abs(fd - bp) / max(abs(fd) + abs(bp), 1e-8) < 1e-5

    def test_gradients_exact_for_fixed_dropout_mask(self):
        cfg = MlpConfig(input_dim=8, hidden_widths=(16, 16), output_dim=4,
                        dropout_rate=0.3, dtype="float64", seed=5)
        m = init_mlp(cfg)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(8, 8))
        y = rng.normal(size=(8, 4))
        masks = sample_dropout_masks(m, 8, np.random.default_rng(9))
        _, grads = loss_and_grad(m, x, y, mode="train", masks=masks)
        h = 1e-5
        w = m.weights[1]
        for k in (0, 37, 100):
            orig = w.reshape(-1)[k]
            w.reshape(-1)[k] = orig + h
            lp, _ = loss_and_grad(m, x, y, mode="train", masks=masks)
            w.reshape(-1)[k] = orig - h
            lm, _ = loss_and_grad(m, x, y, mode="train", masks=masks)
            w.reshape(-1)[k] = orig
            fd = (lp - lm) / (2 * h)
            bp = grads["weights"][1].reshape(-1)[k]
            assert abs(fd - bp) / max(abs(fd) + abs(bp), 1e-8) < 1e-5

    def test_duplicated_batch_invariance(self):
        m = tiny_model(seed=6)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 8))
        y = rng.normal(size=(1, 4))
        l1, g1 = loss_and_grad(m, x, y, mode="eval")
        lk, gk = loss_and_grad(m, np.repeat(x, 5, axis=0), np.repeat(y, 5, axis=0),
                               mode="eval")
        assert abs(l1 - lk) < 1e-12
        for a, b in zip(g1["weights"], gk["weights"]):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            loss_and_grad(tiny_model(), np.zeros((0, 8)), np.zeros((0, 4)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts(self):
        m = tiny_model()
        x = np.full((2, 8), 1e200)
        y = np.zeros((2, 4))
        m.weights[0][:] = 1e200
        with pytest.raises(TrainingDivergedError):
            loss_and_grad(m, x, y, mode="eval")


class TestAdam:
    def test_zero_gradient_no_change(self):
        m = tiny_model()
        st = AdamState.for_model(m)
        zero = {"weights": [np.zeros_like(w) for w in m.weights],
                "biases": [np.zeros_like(b) for b in m.biases]}
        before = [w.copy() for w in m.weights]
        adam_step(st, m, zero)
        for w0, w1 in zip(before, m.weights):
            np.testing.assert_array_equal(w0, w1)

    def test_first_step_magnitude(self):
        # m-hat / sqrt(v-hat) = sign(g) after one step, so |step| ~ lr
        m = tiny_model()
        st = AdamState.for_model(m, learning_rate=1e-3)
        grads = {"weights": [np.ones_like(w) for w in m.weights],
                 "biases": [np.zeros_like(b) for b in m.biases]}
        before = m.weights[0].copy()
        adam_step(st, m, grads)
        step = np.abs(m.weights[0] - before)
        np.testing.assert_allclose(step, 1e-3 / (1 + 1e-8), rtol=1e-10)

    def test_trajectory_determinism(self):
        runs = []
        for _ in range(2):
            m = tiny_model(seed=8)
            st = AdamState.for_model(m)
            rng = np.random.default_rng(8)
            x = rng.normal(size=(16, 8))
            y = rng.normal(size=(16, 4))
            for _ in range(5):
                _, g = loss_and_grad(m, x, y, mode="eval")
                adam_step(st, m, g)
            runs.append([w.copy() for w in m.weights])
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a, b)


class TestTrain:
    def _linear_task(self):
        rng = np.random.default_rng(3)
        a = 0.3 * rng.normal(size=(6, 2))
        x = rng.normal(size=(600, 6))
        return x[:500], x[:500] @ a, x[500:], x[500:] @ a

    def test_linear_task_reaches_small_mse(self):
        xt, yt, xv, yv = self._linear_task()
        m = init_mlp(MlpConfig(input_dim=6, hidden_widths=(32,), output_dim=2,
                               dtype="float64", seed=0))
        m, hist = train(m, xt, yt, xv, yv,
                        TrainConfig(epochs=200, batch_size=25, learning_rate=1e-2,
                                    patience=0, seed=0))
        assert hist[-1]["train_loss"] < 1e-4

    def test_history_and_early_stopping_contract(self):
        xt, yt, xv, yv = self._linear_task()
        m = init_mlp(MlpConfig(input_dim=6, hidden_widths=(16,), output_dim=2,
                               dtype="float64", seed=1))
        cfg = TrainConfig(epochs=80, batch_size=50, learning_rate=1e-2,
                          patience=5, seed=1)
        m, hist = train(m, xt, yt, xv, yv, cfg)
        assert len(hist) <= cfg.epochs
        best = int(np.argmin([h["val_loss"] for h in hist]))
        assert len(hist) - 1 - best <= cfg.patience

    def test_returns_best_validation_parameters(self):
        xt, yt, xv, yv = self._linear_task()
        m = init_mlp(MlpConfig(input_dim=6, hidden_widths=(16,), output_dim=2,
                               dtype="float64", seed=2))
        m, hist = train(m, xt, yt, xv, yv,
                        TrainConfig(epochs=30, batch_size=50, learning_rate=1e-2,
                                    patience=0, seed=2))
        best_val = min(h["val_loss"] for h in hist)
        assert abs(eval_loss(m, xv, yv) - best_val) < 1e-12

    def test_training_decreases_loss(self):
        xt, yt, xv, yv = self._linear_task()
        m = init_mlp(MlpConfig(input_dim=6, hidden_widths=(16,), output_dim=2,
                               dtype="float64", seed=3))
        m, hist = train(m, xt, yt, xv, yv,
                        TrainConfig(epochs=20, batch_size=50, learning_rate=1e-2,
                                    patience=0, seed=3))
        assert hist[-1]["train_loss"] < hist[0]["train_loss"]

    def test_bit_identical_histories(self):
        xt, yt, xv, yv = self._linear_task()
        hists = []
        for _ in range(2):
            m = init_mlp(MlpConfig(input_dim=6, hidden_widths=(16,), output_dim=2,
                                   seed=4, dropout_rate=0.2))
            _, hist = train(m, xt, yt, xv, yv,
                            TrainConfig(epochs=10, batch_size=64,
                                        learning_rate=1e-3, patience=0, seed=4))
            hists.append(hist)
        assert hists[0] == hists[1]

    def test_history_csv(self, tmp_path):
        hist = [{"epoch": 0, "train_loss": 1.5, "val_loss": 2.5},
                {"epoch": 1, "train_loss": 0.5, "val_loss": 1.25}]
        path = tmp_path / "h.csv"
        save_history_csv(hist, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_loss"
        assert len(lines) == 3


class TestLipschitzContinuity:
    def test_spectral_norm_product_bounds_perturbations(self):
        # eval-mode network is Lipschitz with constant prod ||W_l||_2
        m = tiny_model(seed=9)
        lip = 1.0
        for w in m.weights:
            lip *= np.linalg.svd(w, compute_uv=False)[0]
        rng = np.random.default_rng(9)
        x = rng.normal(size=8)
        base = forward(m, x)
        for _ in range(100):
            delta = rng.normal(size=8) * 10 ** rng.uniform(-6, 0)
            out = forward(m, x + delta)
            assert np.linalg.norm(out - base) <= lip * np.linalg.norm(delta) + 1e-12


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        m = tiny_model(seed=10, dtype="float32")
        m.stats = StandardizationStats(mean=np.arange(8.0), std=np.full(8, 2.0))
        m.metadata = {"kind": "naive", "task": "simple"}
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, path)
        m2 = load_checkpoint(path)
        x = np.random.default_rng(0).normal(size=(100, 8))
        np.testing.assert_array_equal(forward(m, x), forward(m2, x))
        np.testing.assert_array_equal(m.stats.mean, m2.stats.mean)
        assert m2.metadata["kind"] == "naive"
        assert m2.config == m.config

    def test_truncated_file_rejected(self, tmp_path):
        m = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises((ChecksumError, FormatVersionError)):
            load_checkpoint(path)

    def test_corrupted_byte_rejected(self, tmp_path):
        m = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, path)
        blob = bytearray(path.read_bytes())
        blob[40] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)

    def test_future_version_rejected(self, tmp_path):
        import hashlib
        import struct
        m = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, path)
        blob = bytearray(path.read_bytes())[:-32]
        blob[4:8] = struct.pack("<I", 42)
        body = bytes(blob)
        path.write_bytes(body + hashlib.sha256(body).digest())
        with pytest.raises(FormatVersionError):
            load_checkpoint(path)

    def test_config_echo_dimensions(self, tmp_path):
        m = init_mlp(MlpConfig(input_dim=60, hidden_widths=(32,), output_dim=3,
                               seed=0))
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, path)
        assert load_checkpoint(path).config.output_dim == 3
