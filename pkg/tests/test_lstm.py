import math
from types import SimpleNamespace

import numpy as np
import pytest

from uavtid import lstm
from uavtid.lstm import (
    ModelFileError,
    NumericOverflowError,
    Optimizer,
    RecurrentState,
    TrainConfig,
    TrainingFailedError,
    analytic_gradients,
    forward,
    gradient_check,
    init_model,
    load_model,
    save_model,
    step,
    train,
)


def tiny_model(seed=0, dropout=0.0):
    return init_model(
        input_width=3, hidden_sizes=(5, 4), dense_units=3, dropout_rate=dropout, seed=seed
    )


def make_sequences(n, length, seed, separable=True):
    """Toy corpus: positives carry a low-frequency bump on channel 0."""
    rng = np.random.default_rng(seed)
    out = []
    t = np.linspace(0, 1, length)
    for i in range(n):
        label = i % 2
        data = rng.normal(scale=0.1, size=(length, 2))
        if separable and label:
            data[:, 0] += np.sin(np.pi * t)
        out.append(SimpleNamespace(data=data.astype(np.float32), label=label))
    return out


class TestForward:
    def test_zero_weights_give_exactly_half(self):
        model = tiny_model()
        for p in model.params.values():
            p[:] = 0.0
        prob, _ = forward(model, np.random.default_rng(0).normal(size=(20, 3)))
        assert prob == 0.5

    def test_single_step_matches_hand_computation(self):
        model = init_model(input_width=1, hidden_sizes=(1,), dense_units=1, seed=0)
        model.params["lstm0_w"] = np.array(
            [[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2], [0.7, -0.1]]
        )
        model.params["lstm0_b"] = np.array([0.05, 1.0, -0.02, 0.3])
        model.params["dense_w"] = np.array([[1.3]])
        model.params["dense_b"] = np.array([0.1])
        model.params["out_w"] = np.array([0.8])
        model.params["out_b"] = np.array([-0.05])

        x = 0.6
        sig = lambda z: 1.0 / (1.0 + math.exp(-z))
        i = sig(0.3 * x + 0.05)
        f = sig(0.1 * x + 1.0)
        g = math.tanh(-0.5 * x - 0.02)
        o = sig(0.7 * x + 0.3)
        c = i * g  # c_prev = 0
        h = o * math.tanh(c)
        a = max(0.0, 1.3 * h + 0.1)
        expected = sig(0.8 * a - 0.05)

        prob, state = step(model, [x], RecurrentState.zeros(model))
        assert prob == pytest.approx(expected, abs=1e-12)
        assert state.h[0][0] == pytest.approx(h, abs=1e-12)
        assert state.c[0][0] == pytest.approx(c, abs=1e-12)

    def test_streaming_matches_whole_window(self):
        model = tiny_model(seed=3)
        data = np.random.default_rng(1).normal(size=(15, 3))
        whole, _ = forward(model, data)
        state = RecurrentState.zeros(model)
        for row in data:
            prob, state = step(model, row, state)
        assert prob == pytest.approx(whole, abs=1e-12)

    def test_deterministic(self):
        a, _ = forward(tiny_model(seed=5), np.ones((10, 3)))
        b, _ = forward(tiny_model(seed=5), np.ones((10, 3)))
        assert a == b

    def test_dropout_rate_ignored_at_inference(self):
        base = tiny_model(seed=2, dropout=0.0)
        dropped = tiny_model(seed=2, dropout=0.5)
        data = np.random.default_rng(4).normal(size=(12, 3))
        assert forward(base, data)[0] == forward(dropped, data)[0]

    def test_state_reset_restores_fresh_behaviour(self):
        model = tiny_model(seed=6)
        data = np.random.default_rng(7).normal(size=(12, 3))
        fresh, _ = forward(model, data)
        state = RecurrentState.zeros(model)
        forward(model, np.random.default_rng(8).normal(size=(30, 3)), state)
        state.reset()
        again, _ = forward(model, data, state)
        assert again == pytest.approx(fresh, abs=1e-12)

    def test_state_carries_memory_between_windows(self):
        model = tiny_model(seed=6)
        data = np.random.default_rng(7).normal(size=(3, 3))
        fresh, _ = forward(model, data)
        state = RecurrentState.zeros(model)
        forward(model, np.ones((30, 3)), state)
        carried, _ = forward(model, data, state)
        assert carried != fresh

    def test_non_finite_sample_raises_with_step_index(self):
        model = tiny_model()
        data = np.zeros((10, 3))
        data[4, 1] = np.nan
        with pytest.raises(NumericOverflowError) as info:
            forward(model, data)
        assert info.value.step_index == 4

    def test_shape_mismatch_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            forward(model, np.zeros((10, 2)))
        with pytest.raises(ValueError):
            step(model, np.zeros(2), RecurrentState.zeros(model))


class TestGradients:
    def test_gradient_check_under_tolerance_across_seeds(self):
        worst = 0.0
        for seed in range(10):
            model = tiny_model(seed=seed)
            rng = np.random.default_rng(100 + seed)
            data = rng.normal(size=(8, 3))
            worst = max(worst, gradient_check(model, data, float(seed % 2)))
        assert worst < 1e-4

    def test_zero_length_sequence_gives_zero(self):
        assert gradient_check(tiny_model(), np.zeros((0, 3)), 1.0) == 0.0

    def test_spot_check_against_central_differences(self):
        model = tiny_model(seed=1)
        data = np.random.default_rng(2).normal(size=(6, 3))
        grads = analytic_gradients(model, data, 1.0)
        eps = 1e-6

        def loss():
            prob, _ = forward(model, data)
            return -math.log(prob)

        for name, idx in (("lstm0_w", 7), ("dense_w", 2), ("out_w", 0)):
            flat = model.params[name].reshape(-1)
            keep = flat[idx]
            flat[idx] = keep + eps
            up = loss()
            flat[idx] = keep - eps
            down = loss()
            flat[idx] = keep
            numeric = (up - down) / (2 * eps)
            assert grads[name].reshape(-1)[idx] == pytest.approx(numeric, abs=1e-6)

    def test_rejects_large_models(self):
        big = init_model(input_width=3, hidden_sizes=(32, 16), dense_units=8)
        with pytest.raises(ValueError):
            gradient_check(big, np.zeros((4, 3)), 0.0)


@pytest.fixture(scope="module")
def toy_run():
    model = init_model(
        input_width=2, hidden_sizes=(8, 6), dense_units=4, dropout_rate=0.1, seed=0
    )
    data = (make_sequences(60, 25, seed=0), make_sequences(20, 25, seed=1))
    cfg = TrainConfig(epochs=20, batch_size=16, seed=0)
    return train(model, data, cfg)


class TestTraining:

    def test_separable_toy_reaches_high_accuracy(self, toy_run):
        _, history = toy_run
        assert max(history["val_accuracy"]) >= 0.99

    def test_loss_decreases(self, toy_run):
        _, history = toy_run
        assert history["train_loss"][-1] < history["train_loss"][0]

    def test_history_is_bit_reproducible(self):
        model = init_model(input_width=2, hidden_sizes=(4, 3), dense_units=3, seed=0)
        data = (make_sequences(16, 10, seed=0), make_sequences(8, 10, seed=1))
        cfg = TrainConfig(epochs=3, batch_size=8, seed=7)
        _, h1 = train(model, data, cfg)
        _, h2 = train(model, data, cfg)
        assert h1 == h2

    def test_zero_epochs_leaves_model_untouched(self):
        model = tiny_model(seed=4)
        data = (make_sequences(4, 5, seed=0), make_sequences(4, 5, seed=1))
        trained, history = train(model, data, TrainConfig(epochs=0))
        for name in model.params:
            np.testing.assert_array_equal(trained.params[name], model.params[name])
        assert history["train_loss"] == []

    def test_rmsprop_variant_runs(self):
        model = init_model(input_width=2, hidden_sizes=(4, 3), dense_units=3, seed=0)
        data = (make_sequences(16, 10, seed=0), make_sequences(8, 10, seed=1))
        cfg = TrainConfig(optimizer=Optimizer.RMSPROP, epochs=2, batch_size=8)
        _, history = train(model, data, cfg)
        assert len(history["train_loss"]) == 2

    def test_nan_data_fails_with_epoch(self):
        model = init_model(input_width=2, hidden_sizes=(4, 3), dense_units=3, seed=0)
        bad = make_sequences(8, 10, seed=0)
        bad[0].data[2, 0] = np.nan
        with pytest.raises(TrainingFailedError) as info:
            train(model, (bad, make_sequences(4, 10, seed=1)), TrainConfig(epochs=2))
        assert info.value.epoch == 0

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestPersistence:
    def test_round_trip_is_bit_exact(self, tmp_path):
        model = tiny_model(seed=9)
        model.channel_names = ("e_z", "a_norm", "eta")
        model.channel_scales = (0.5, 9.81, 0.3)
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.hidden_sizes == model.hidden_sizes
        assert loaded.channel_names == model.channel_names
        assert loaded.channel_scales == model.channel_scales
        for name in model.params:
            np.testing.assert_array_equal(loaded.params[name], model.params[name])
        data = np.random.default_rng(0).normal(size=(10, 3))
        assert forward(loaded, data)[0] == forward(model, data)[0]

    def test_wrong_magic_names_field(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"not a model at all")
        with pytest.raises(ModelFileError) as info:
            load_model(path)
        assert info.value.field == "magic"

    def test_truncated_parameters_name_the_block(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "model.bin"
        save_model(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 100])
        with pytest.raises(ModelFileError) as info:
            load_model(path)
        assert info.value.field in model.params

    def test_input_width_mismatch_reported(self, tmp_path):
        path = tmp_path / "model.bin"
        save_model(tiny_model(), path)
        with pytest.raises(ModelFileError) as info:
            load_model(path, expected_input_width=4)
        assert info.value.field == "input_width"
