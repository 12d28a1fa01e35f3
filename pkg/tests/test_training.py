"""Tests for the optimizer, the plateau schedule and the training loop."""

import numpy as np
import pytest

from src.back.dataset import ExamDataset
from src.back.errors import ConfigError, InputError, NumericError
from src.back.model import ResNet1d
from src.back.training import (
    AdamState,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    evaluate_loss,
    plateau_scheduler,
    split_dataset,
    train,
)


def _toy_dataset(n, samples=8):
    rng = np.random.default_rng(n)
    ids = [f"exam-{i:03d}" for i in range(n)]
    return ExamDataset(ids, rng.standard_normal((n, 12, samples)).astype(np.float32),
                       (rng.random((n, 6)) < 0.3).astype(np.float32))


class TestTrainConfig:
    def test_defaults_valid(self):
        config = TrainConfig().validate()
        assert config.initial_lr == 0.001
        assert config.epochs == 50 and config.plateau_patience == 7 and config.lr_factor == 10

    @pytest.mark.parametrize("field,value", [
        ("plateau_patience", 0), ("lr_factor", 1.0), ("validation_fraction", 0.0),
        ("validation_fraction", 1.0), ("batch_size", 0), ("max_steps", 0),
    ])
    def test_invalid(self, field, value):
        with pytest.raises(ConfigError):
            TrainConfig(**{field: value}).validate()


class TestAdamStep:
    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.zeros_like(params)
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.001)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert np.all(state.m["w"] == 0) and np.all(state.v["w"] == 0)
        assert state.t == 1

    def test_first_step_closed_form(self):
        params = {"w": np.array([0.0])}
        state = AdamState.zeros_like(params)
        adam_step(params, {"w": np.array([1.0])}, state, lr=0.001)
        assert params["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(9)
            params = {"w": rng.standard_normal(5)}
            state = AdamState.zeros_like(params)
            for _ in range(20):
                adam_step(params, {"w": rng.standard_normal(5)}, state, lr=0.01)
            return params["w"]

        np.testing.assert_array_equal(run(), run())

    def test_second_moment_non_negative(self, rng):
        params = {"w": rng.standard_normal((3, 4))}
        state = AdamState.zeros_like(params)
        for _ in range(50):
            adam_step(params, {"w": rng.standard_normal((3, 4)) * 100}, state, lr=0.01)
            assert np.all(state.v["w"] >= 0)

    def test_non_finite_gradient(self):
        params = {"w": np.zeros(2)}
        state = AdamState.zeros_like(params)
        with pytest.raises(NumericError):
            adam_step(params, {"w": np.array([np.inf, 0.0])}, state, lr=0.001)
        assert state.t == 0
        np.testing.assert_array_equal(params["w"], 0.0)


class TestPlateauScheduler:
    def test_improving_losses_keep_lr(self):
        losses = [1.0 - 0.01 * i for i in range(30)]
        for i in range(1, len(losses) + 1):
            assert plateau_scheduler(losses[:i], 0.001) == 0.001

    def test_seven_flat_epochs(self):
        history = [1.0] * 8
        for i in range(1, 8):
            assert plateau_scheduler(history[:i], 0.001) == 0.001
        assert plateau_scheduler(history, 0.001) == pytest.approx(0.0001)

    def test_two_plateaus(self):
        scheduler = PlateauScheduler(0.001)
        drops = [scheduler.update(1.0) for _ in range(15)]
        assert drops.count(True) == 2
        assert drops.index(True) == 7
        assert scheduler.lr == pytest.approx(0.00001)

    def test_improvement_resets_wait(self):
        scheduler = PlateauScheduler(0.001)
        for loss in [1.0, 1.0, 1.0, 1.0, 0.5] + [0.5] * 6:
            scheduler.update(loss)
        assert scheduler.lr == 0.001

    def test_lr_only_takes_decade_values(self, rng):
        scheduler = PlateauScheduler(0.001)
        seen = []
        for loss in rng.uniform(0.5, 1.0, 200):
            scheduler.update(loss)
            seen.append(scheduler.lr)
        assert all(a >= b for a, b in zip(seen, seen[1:]))
        for lr in seen:
            k = np.log10(0.001 / lr)
            assert k == pytest.approx(round(k))

    def test_empty_history(self):
        with pytest.raises(InputError):
            plateau_scheduler([], 0.001)


class TestSplitDataset:
    def test_two_percent(self):
        train_set, val_set = split_dataset(_toy_dataset(100), 0.02, seed=1)
        assert (len(train_set), len(val_set)) == (98, 2)

    def test_disjoint_and_exhaustive(self):
        dataset = _toy_dataset(50)
        train_set, val_set = split_dataset(dataset, 0.2, seed=4)
        assert not set(train_set.ids) & set(val_set.ids)
        assert sorted(train_set.ids + val_set.ids) == sorted(dataset.ids)

    def test_same_seed_same_split(self):
        dataset = _toy_dataset(40)
        assert split_dataset(dataset, 0.1, 3)[1].ids == split_dataset(dataset, 0.1, 3)[1].ids

    def test_independent_of_order(self):
        dataset = _toy_dataset(40)
        reversed_set = dataset.subset(np.arange(39, -1, -1))
        assert set(split_dataset(dataset, 0.1, 3)[1].ids) == set(split_dataset(reversed_set, 0.1, 3)[1].ids)

    def test_too_small(self):
        with pytest.raises(InputError):
            split_dataset(_toy_dataset(1), 0.5, 0)


@pytest.fixture
def mini_sets(desk_exams, mini_config):
    dataset = ExamDataset.from_exams(desk_exams, mini_config.input_samples)
    return split_dataset(dataset, 0.25, seed=0)


def _fresh(config):
    return ResNet1d.build(config, np.random.default_rng(21))


class TestTrain:
    def test_overfits_tiny_set(self, desk_exams, mini_config):
        dataset = ExamDataset.from_exams(desk_exams, mini_config.input_samples)
        model = _fresh(mini_config)
        params = {name: model.params[name] for name in model.trainable_names()}
        state = AdamState.zeros_like(params)
        first = None
        for _ in range(500):
            loss, grads, _ = model.loss_and_grads(dataset.signals, dataset.labels, training=True)
            first = loss if first is None else first
            adam_step(model.params, grads, state, lr=0.001)
        assert loss < 0.01
        assert loss < first / 100

    def test_returns_best_validation_snapshot(self, mini_sets, mini_config):
        train_set, val_set = mini_sets
        model = _fresh(mini_config)
        best, log = train(model, train_set, val_set, TrainConfig(epochs=6, batch_size=4, seed=2))
        val_losses = [record.val_loss for record in log.epochs]
        assert log.best_epoch == int(np.argmin(val_losses))
        restored = ResNet1d.from_weights(best)
        assert evaluate_loss(restored, val_set, 4) == pytest.approx(log.best_val_loss, abs=1e-6)

    def test_same_seed_same_log(self, mini_sets, mini_config):
        train_set, val_set = mini_sets
        config = TrainConfig(epochs=3, batch_size=5, seed=8)
        best_a, log_a = train(_fresh(mini_config), train_set, val_set, config)
        best_b, log_b = train(_fresh(mini_config), train_set, val_set, config)
        assert log_a == log_b
        for name in best_a.params:
            np.testing.assert_array_equal(best_a.params[name], best_b.params[name])

    def test_partial_final_batch_counts(self, mini_sets, mini_config):
        train_set, val_set = mini_sets
        _, log = train(_fresh(mini_config), train_set, val_set, TrainConfig(epochs=1, batch_size=5))
        assert log.epochs[0].steps == -(-len(train_set) // 5)

    def test_max_steps(self, mini_sets, mini_config):
        train_set, val_set = mini_sets
        _, log = train(_fresh(mini_config), train_set, val_set, TrainConfig(epochs=50, batch_size=4, max_steps=5))
        assert log.epochs[-1].steps == 5

    def test_nan_loss_aborts(self, mini_sets, mini_config):
        train_set, val_set = mini_sets
        model = _fresh(mini_config)
        model.params["dense.bias"][0] = np.nan
        with pytest.raises(NumericError):
            train(model, train_set, val_set, TrainConfig(epochs=1, batch_size=4))

    def test_overlapping_sets(self, mini_sets, mini_config):
        train_set, _ = mini_sets
        with pytest.raises(InputError):
            train(_fresh(mini_config), train_set, train_set, TrainConfig(epochs=1))
