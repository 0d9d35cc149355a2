import csv
import math

import numpy as np
import pytest

from conftest import series_of
from prognost.errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    NonFiniteGradientError,
    TrainingDivergedError,
)
from prognost.evaluate import compute_persistence_baseline
from prognost.model.config import TrainConfig
from prognost.model.network import (
    dumps_model,
    forward_batch,
    init_params,
    predict,
    zeros_like,
)
from prognost.preprocess import make_windows, prepare_dataset, split_train_test
from prognost.train import (
    AdamState,
    Gradients,
    adam_step,
    bptt_backward,
    clip_gradients,
    compute_loss,
    grad_check,
    relative_error,
    train,
    train_batch,
)


def blocks_equal(a, b):
    return all(
        x.tobytes() == y.tobytes() for (_, x), (_, y) in zip(a.named_blocks(), b.named_blocks())
    )


def sine_split(sine, window=5, ratio=0.7):
    split, _ = prepare_dataset(sine, window, ratio)
    return split


def test_mse_loss():
    loss, grad = compute_loss([1.0, 2.0], [1.0, 2.0])
    assert loss == 0.0
    np.testing.assert_array_equal(grad, [0.0, 0.0])
    loss, grad = compute_loss([0.0], [3.0])
    assert loss == 9.0
    np.testing.assert_array_equal(grad, [-6.0])


def test_bce_loss_symmetric_point():
    loss, grad = compute_loss([0.5], [0.5], "bce")
    assert loss == pytest.approx(math.log(2), rel=1e-12)
    np.testing.assert_array_equal(grad, [0.0])


def test_bce_gradient_matches_difference():
    pred = np.array([0.2, 0.7, 0.9])
    target = np.array([0.3, 0.5, 0.99])
    _, grad = compute_loss(pred, target, "bce")
    eps = 1e-7
    for k in range(3):
        up = pred.copy()
        up[k] += eps
        down = pred.copy()
        down[k] -= eps
        numeric = (compute_loss(up, target, "bce")[0] - compute_loss(down, target, "bce")[0]) / (
            2 * eps
        )
        assert grad[k] == pytest.approx(numeric, rel=1e-6)


def test_bce_clips_extremes():
    loss, grad = compute_loss([0.0, 1.0], [0.0, 1.0], "bce")
    assert math.isfinite(loss)
    assert loss < 1e-5
    np.testing.assert_array_equal(grad, [0.0, 0.0])


def test_loss_errors():
    with pytest.raises(DimensionError):
        compute_loss([1.0, 2.0], [1.0])
    with pytest.raises(DomainError):
        compute_loss([1.5], [0.5], "bce")
    with pytest.raises(DomainError):
        compute_loss([0.5], [-0.1], "bce")
    with pytest.raises(ConfigError):
        compute_loss([0.5], [0.5], "hinge")


def test_backward_of_zero_loss_gradient(small_model, rng):
    _, cache = forward_batch(small_model, rng.uniform(size=(4, 5)))
    grads = bptt_backward(small_model, cache, np.zeros(4))
    for name, block in grads.items():
        assert not block.any(), name


def test_backward_of_zero_model(small_model, rng):
    zero = zeros_like(small_model)
    _, cache = forward_batch(zero, rng.uniform(size=(3, 5)))
    grads = bptt_backward(zero, cache, np.array([1.0, -2.0, 0.5]))
    for name, block in grads.items():
        assert not block.any(), name


def test_backward_needs_matching_cache(small_model, rng):
    windows = rng.uniform(size=(2, 5))
    _, cache = forward_batch(small_model, windows)
    other = init_params((4, 3), seed=8, window_length=5)
    with pytest.raises(ContractError):
        bptt_backward(other, cache, np.ones(2))
    with pytest.raises(ContractError):
        bptt_backward(small_model, cache, np.ones(3))


def test_gradients_match_the_model(small_model, rng):
    _, grads = train_batch(small_model, rng.uniform(size=(3, 5)), rng.uniform(size=3), "mse")
    for (name, block), (grad_name, grad) in zip(small_model.named_blocks(), grads.items()):
        assert name == grad_name
        assert grad.shape == block.shape
        assert np.all(np.isfinite(grad))


@pytest.mark.parametrize("loss_mode", ["mse", "bce"])
def test_grad_check(loss_mode):
    checks = grad_check((4, 3), seed=7, eps=1e-6, window=5, loss_mode=loss_mode)
    assert [check.block for check in checks][-1] == "head.Wr"
    assert len(checks) == 2 * 12 + 1
    for check in checks:
        assert check.max_relative_error < 1e-5, check


def test_relative_error_guard():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == 0.5


def test_grad_check_rejects_zero_step():
    with pytest.raises(ConfigError):
        grad_check(eps=0.0)


def test_adam_zero_gradient_is_identity(small_model):
    config = TrainConfig(hidden_dims=(4, 3))
    state = AdamState.zeros(small_model)
    model, state = adam_step(small_model, Gradients.zeros(small_model), state, config)
    assert blocks_equal(model, small_model)
    assert state.t == 1
    assert all(not m.any() for m in state.m.values())
    assert all(not v.any() for v in state.v.values())


def test_adam_first_step_moves_by_learning_rate(small_model):
    config = TrainConfig(hidden_dims=(4, 3))
    zero = zeros_like(small_model)
    grads = Gradients({name: np.ones_like(block) for name, block in zero.named_blocks()})
    model, state = adam_step(zero, grads, AdamState.zeros(zero), config)
    for name, block in model.named_blocks():
        np.testing.assert_allclose(block, -config.learning_rate, rtol=1e-7, err_msg=name)
    assert state.t == 1
    assert all(np.all(v >= 0) for v in state.v.values())
    # inputs untouched
    assert all(not block.any() for _, block in zero.named_blocks())


def test_adam_is_odd(small_model, rng):
    config = TrainConfig(hidden_dims=(4, 3))
    zero = zeros_like(small_model)
    raw = {name: rng.normal(size=block.shape) for name, block in zero.named_blocks()}
    plus, _ = adam_step(zero, Gradients(raw), AdamState.zeros(zero), config)
    minus, _ = adam_step(
        zero, Gradients({name: -g for name, g in raw.items()}), AdamState.zeros(zero), config
    )
    for (name, a), (_, b) in zip(plus.named_blocks(), minus.named_blocks()):
        np.testing.assert_array_equal(a, -b, err_msg=name)


def test_adam_rejects_non_finite(small_model):
    grads = Gradients.zeros(small_model)
    grads.blocks["layer1.Vf"][0, 0] = math.nan
    with pytest.raises(NonFiniteGradientError) as info:
        adam_step(small_model, grads, AdamState.zeros(small_model), TrainConfig())
    assert info.value.block == "layer1.Vf"


def test_adam_is_deterministic(small_model, rng):
    config = TrainConfig(hidden_dims=(4, 3))
    windows = rng.uniform(size=(6, 5))
    targets = rng.uniform(size=6)

    def run():
        model, state = small_model, AdamState.zeros(small_model)
        for _ in range(3):
            _, grads = train_batch(model, windows, targets, "mse")
            model, state = adam_step(model, grads, state, config)
        return model, state

    (first, first_state), (second, second_state) = run(), run()
    assert blocks_equal(first, second)
    for name in first_state.m:
        assert first_state.m[name].tobytes() == second_state.m[name].tobytes()
        assert first_state.v[name].tobytes() == second_state.v[name].tobytes()


def test_clip_gradients(small_model):
    grads = Gradients({name: np.full(block.shape, 3.0) for name, block in small_model.named_blocks()})
    clipped = clip_gradients(grads, 1.0)
    assert clipped.global_norm() == pytest.approx(1.0)
    assert clip_gradients(clipped, 10.0) is clipped


def test_one_step_per_epoch_with_a_large_batch(sine):
    split = sine_split(sine)
    config = TrainConfig(hidden_dims=(6,), epochs=1, batch_size=1000, seed=3)
    model, report = train(split, config)

    start = init_params((6,), 3, window_length=5)
    _, grads = train_batch(start, split.train.windows, split.train.targets, "mse")
    expected, _ = adam_step(start, grads, AdamState.zeros(start), config)
    assert blocks_equal(model, expected)
    assert len(report.epochs) == 1


def test_zero_learning_rate_is_identity(sine):
    split = sine_split(sine)
    config = TrainConfig(hidden_dims=(5, 3), epochs=4, batch_size=20, learning_rate=0.0, seed=9)
    model, report = train(split, config)
    assert blocks_equal(model, init_params((5, 3), 9, window_length=5))
    assert len(report.epochs) == 4


def test_epochs_must_be_positive():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


def test_training_is_deterministic(sine, tmp_path):
    split = sine_split(sine)
    config = TrainConfig(hidden_dims=(6, 4), epochs=5, batch_size=16, seed=21)
    first, first_report = train(split, config)
    second, second_report = train(split, config)
    assert dumps_model(first) == dumps_model(second)
    assert first_report.train_losses == second_report.train_losses
    assert first_report.test_rmses == second_report.test_rmses


def test_report_and_progress(sine, tmp_path):
    split = sine_split(sine)
    seen = []
    config = TrainConfig(hidden_dims=(4,), epochs=3, seed=1)
    _, report = train(split, config, progress_cb=seen.append)
    assert [stats.epoch for stats in seen] == [1, 2, 3]
    assert report.epochs == seen
    assert report.wall_time > 0

    path = tmp_path / "report.csv"
    report.write_csv(str(path))
    with open(path, newline="") as report_file:
        rows = list(csv.DictReader(report_file))
    assert [row["epoch"] for row in rows] == ["1", "2", "3"]
    assert float(rows[2]["test_rmse"]) == report.epochs[2].test_rmse


def test_divergence_is_reported():
    series = series_of(np.concatenate([np.zeros(10), np.full(10, 1e200)]))
    split = split_train_test(make_windows(series, 5), 0.7)
    with pytest.raises(TrainingDivergedError) as info:
        train(split, TrainConfig(hidden_dims=(2,), epochs=3))
    assert info.value.report.epochs == []
    assert "last good epoch was 0" in str(info.value)


def test_window_mismatch(sine):
    split = sine_split(sine, window=4)
    with pytest.raises(ConfigError):
        train(split, TrainConfig(hidden_dims=(4,), epochs=1, window=5))


def test_fine_tuning_starts_from_the_given_model(sine):
    split = sine_split(sine)
    initial = init_params((4,), seed=99, window_length=5)
    config = TrainConfig(hidden_dims=(4,), epochs=2, learning_rate=0.0)
    model, _ = train(split, config, initial=initial)
    assert blocks_equal(model, initial)
    with pytest.raises(ConfigError):
        train(split, TrainConfig(hidden_dims=(5,), epochs=1), initial=initial)
    with pytest.raises(ConfigError):
        train(split, TrainConfig(hidden_dims=(4,), epochs=1, loss_mode="bce"), initial=initial)


def test_training_loss_mostly_decreases(sine):
    split = sine_split(sine)
    config = TrainConfig(hidden_dims=(8,), epochs=100, seed=42)
    _, report = train(split, config)
    losses = report.train_losses
    non_increasing = sum(1 for a, b in zip(losses, losses[1:]) if b <= a)
    assert non_increasing >= 94
    assert losses[-1] < losses[0]


def test_bce_training_runs(sine):
    split = sine_split(sine)
    model, report = train(split, TrainConfig(hidden_dims=(4,), epochs=3, loss_mode="bce"))
    assert len(report.epochs) == 3
    assert np.all((predict(model, split.test.windows) > 0) & (predict(model, split.test.windows) < 1))


@pytest.mark.slow
def test_sine_overfit_beats_persistence(sine):
    split = sine_split(sine)
    config = TrainConfig(hidden_dims=(8,), epochs=500, learning_rate=0.001, seed=42)
    model, report = train(split, config)
    assert report.train_losses[-1] < 1e-4
    assert report.test_rmses[-1] < compute_persistence_baseline(split.test).rmse
