"""Losses, backpropagation through time, Adam and the training loop"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
import math
import time
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
import numpy.typing as npt

import prognost.constants as constants
from prognost.errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    EmptyDatasetError,
    NonFiniteGradientError,
    TrainingDivergedError,
)
from prognost.model.config import TrainConfig
from prognost.model.network import (
    GATES,
    ForwardCache,
    ModelParams,
    forward_batch,
    init_params,
    predict,
)
from prognost.preprocess import SplitDataset, WindowedDataset
from prognost.util import format_float

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

REPORT_FIELDNAMES = ["epoch", "train_loss", "test_rmse"]


def compute_loss(pred: npt.ArrayLike, target: npt.ArrayLike, mode: str = "mse") -> Tuple[float, Array]:
    """Mean loss over the batch and its gradient with respect to each prediction.

    mse: mean (target - pred)^2
    bce: -mean [p log q + (1 - p) log(1 - q)] with p the target and q the
         prediction, both clipped into [1e-7, 1 - 1e-7]"""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise DimensionError(
            f"{pred.shape} predictions for {target.shape} targets"
        )
    count = len(pred)
    if count == 0:
        raise DimensionError("loss of an empty batch")

    if mode == "mse":
        diff = pred - target
        return float(np.mean(diff * diff)), 2.0 * diff / count

    if mode == "bce":
        if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
            raise DomainError("cross-entropy needs finite predictions and targets")
        if np.any((target < 0) | (target > 1)) or np.any((pred < 0) | (pred > 1)):
            raise DomainError("cross-entropy needs predictions and targets in [0, 1]")
        low, high = constants.bce_clip, 1.0 - constants.bce_clip
        p = np.clip(target, low, high)
        q = np.clip(pred, low, high)
        loss = -np.mean(p * np.log(q) + (1.0 - p) * np.log(1.0 - q))
        grad = -(p / q - (1.0 - p) / (1.0 - q)) / count
        # clipped predictions don't move the loss
        grad = np.where((pred >= low) & (pred <= high), grad, 0.0)
        return float(loss), grad

    raise ConfigError(f"unknown loss mode {mode!r}")


class Gradients:
    """Gradient blocks keyed like `ModelParams.named_blocks`"""

    def __init__(self, blocks: Dict[str, Array]):
        self.blocks = blocks

    @staticmethod
    def zeros(model: ModelParams) -> Gradients:
        return Gradients({name: np.zeros_like(block) for name, block in model.named_blocks()})

    def __getitem__(self, name: str) -> Array:
        return self.blocks[name]

    def items(self) -> Iterator[Tuple[str, Array]]:
        return iter(self.blocks.items())

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(block * block)) for block in self.blocks.values()))

    def scaled(self, factor: float) -> Gradients:
        return Gradients({name: block * factor for name, block in self.blocks.items()})


def bptt_backward(model: ModelParams, cache: ForwardCache, dloss_dy: npt.ArrayLike) -> Gradients:
    """Gradients of the loss with respect to every weight block, given the
    loss gradient for each prediction of the forward pass behind `cache`.
    Per-window gradients are summed over the batch."""
    if cache.model is not model:
        raise ContractError("forward cache was produced by a different model")
    dy = np.asarray(dloss_dy, dtype=np.float64)
    if dy.shape != cache.output.shape:
        raise ContractError(
            f"{dy.shape} loss gradients for {cache.output.shape} predictions"
        )

    grads = Gradients.zeros(model)
    if model.loss_mode == "bce":
        dz = dy * cache.output * (1.0 - cache.output)
    else:
        dz = dy
    dz = dz[:, np.newaxis]
    grads.blocks["head.Wr"] += dz.T @ cache.head_input

    layer_count = len(model.layers)
    batch = cache.windows.shape[0]
    dh_next = [np.zeros((batch, dim)) for dim in model.hidden_dims]
    dc_next = [np.zeros((batch, dim)) for dim in model.hidden_dims]
    dh_next[-1] = dh_next[-1] + dz @ model.head.Wr

    for t in reversed(range(len(cache.steps))):
        dx_above: Optional[Array] = None
        for index in reversed(range(layer_count)):
            layer = model.layers[index]
            step = cache.steps[t][index]
            dh = dh_next[index] if dx_above is None else dh_next[index] + dx_above

            dc = dc_next[index] + dh * step.o * (1.0 - step.tanh_c * step.tanh_c)
            d_pre = {
                "i": dc * step.g * step.i * (1.0 - step.i),
                "f": dc * step.c_prev * step.f * (1.0 - step.f),
                "o": dh * step.tanh_c * step.o * (1.0 - step.o),
                "c": dc * step.i * (1.0 - step.g * step.g),
            }

            prefix = f"layer{index}."
            dx = np.zeros_like(step.x)
            dh_prev = np.zeros_like(step.h_prev)
            for gate in GATES:
                delta = d_pre[gate]
                grads.blocks[f"{prefix}W{gate}"] += delta.T @ step.x
                grads.blocks[f"{prefix}V{gate}"] += delta.T @ step.h_prev
                grads.blocks[f"{prefix}b{gate}"] += delta.sum(axis=0)
                dx += delta @ layer[f"W{gate}"]
                dh_prev += delta @ layer[f"V{gate}"]

            dh_next[index] = dh_prev
            dc_next[index] = dc * step.f
            dx_above = dx

    return grads


@dataclass
class AdamState:
    """First and second moment estimates per block, and the step counter"""

    m: Dict[str, Array]
    v: Dict[str, Array]
    t: int = 0

    @staticmethod
    def zeros(model: ModelParams) -> AdamState:
        return AdamState(
            m={name: np.zeros_like(block) for name, block in model.named_blocks()},
            v={name: np.zeros_like(block) for name, block in model.named_blocks()},
        )


def clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    """Rescale the whole gradient so its global L2 norm is at most max_norm"""
    norm = grads.global_norm()
    if norm <= max_norm:
        return grads
    return grads.scaled(max_norm / norm)


def adam_step(
    model: ModelParams, grads: Gradients, state: AdamState, config: TrainConfig
) -> Tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, block by block. Returns the new model
    and moment state; the inputs are left untouched."""
    for name, block in grads.items():
        if not np.all(np.isfinite(block)):
            raise NonFiniteGradientError(name)

    t = state.t + 1
    correction1 = 1.0 - config.beta1 ** t
    correction2 = 1.0 - config.beta2 ** t
    new_blocks = {}
    new_m = {}
    new_v = {}
    for name, theta in model.named_blocks():
        g = grads[name]
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_blocks[name] = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        new_m[name] = m
        new_v[name] = v
    return model.with_blocks(new_blocks), AdamState(new_m, new_v, t)


class EpochStats(NamedTuple):
    epoch: int
    train_loss: float
    test_rmse: float


@dataclass
class TrainReport:
    epochs: List[EpochStats] = field(default_factory=list)
    wall_time: float = 0.0
    model_path: Optional[str] = None

    @property
    def train_losses(self) -> List[float]:
        return [stats.train_loss for stats in self.epochs]

    @property
    def test_rmses(self) -> List[float]:
        return [stats.test_rmse for stats in self.epochs]

    def write_csv(self, path: str) -> None:
        """Write `epoch,train_loss,test_rmse` rows"""
        with open(path, "w", encoding="utf-8", newline="") as report_file:
            writer = csv.writer(report_file, lineterminator="\n")
            writer.writerow(REPORT_FIELDNAMES)
            for stats in self.epochs:
                writer.writerow(
                    [stats.epoch, format_float(stats.train_loss), format_float(stats.test_rmse)]
                )


def _rmse(model: ModelParams, dataset: WindowedDataset) -> float:
    if len(dataset) == 0:
        return math.nan
    diff = predict(model, dataset.windows) - dataset.targets
    return float(np.sqrt(np.mean(diff * diff)))


def train_batch(
    model: ModelParams, windows: Array, targets: Array, mode: str
) -> Tuple[float, Gradients]:
    """Mean loss of a batch and the gradient of that mean"""
    output, cache = forward_batch(model, windows)
    loss, dloss = compute_loss(output, targets, mode)
    return loss, bptt_backward(model, cache, dloss)


def train(
    split: SplitDataset,
    config: TrainConfig,
    initial: Optional[ModelParams] = None,
    progress_cb: Optional[Callable[[EpochStats], None]] = None,
) -> Tuple[ModelParams, TrainReport]:
    """Fit a stacked LSTM to the training windows.

    Windows are visited in chronological order in batches of
    `config.batch_size` (the last batch may be short), with one Adam step per
    batch. After every epoch the test RMSE is computed in scaled space. The
    run is fully determined by the data, the config and its seed."""
    train_set = split.train
    if len(train_set) == 0:
        raise EmptyDatasetError("no training windows")
    if train_set.window_length != config.window:
        raise ConfigError(
            f"dataset windows of {train_set.window_length} values, config says {config.window}"
        )

    if initial is None:
        model = init_params(
            config.hidden_dims, config.seed, loss_mode=config.loss_mode, window_length=config.window
        )
    else:
        if initial.hidden_dims != config.hidden_dims or initial.loss_mode != config.loss_mode:
            raise ConfigError(
                f"initial model {list(initial.hidden_dims)}/{initial.loss_mode} does not match "
                f"config {list(config.hidden_dims)}/{config.loss_mode}"
            )
        if initial.window_length not in (None, config.window):
            raise ConfigError(
                f"initial model was trained on windows of {initial.window_length}, "
                f"config says {config.window}"
            )
        model = ModelParams(
            initial.layers, initial.head, initial.loss_mode, config.window, initial.scaler
        )

    state = AdamState.zeros(model)
    report = TrainReport()
    started = time.perf_counter()
    count = len(train_set)

    for epoch in range(1, config.epochs + 1):
        total_loss = 0.0
        for start in range(0, count, config.batch_size):
            windows = train_set.windows[start : start + config.batch_size]
            targets = train_set.targets[start : start + config.batch_size]
            loss, grads = train_batch(model, windows, targets, config.loss_mode)
            total_loss += loss * len(targets)
            if not math.isfinite(loss):
                break
            if config.clip_norm is not None:
                grads = clip_gradients(grads, config.clip_norm)
            model, state = adam_step(model, grads, state, config)

        train_loss = total_loss / count
        if not math.isfinite(train_loss):
            report.wall_time = time.perf_counter() - started
            last_good = report.epochs[-1].epoch if report.epochs else 0
            raise TrainingDivergedError(
                f"training loss became non-finite in epoch {epoch}; "
                f"last good epoch was {last_good}",
                report,
            )

        stats = EpochStats(epoch, train_loss, _rmse(model, split.test))
        report.epochs.append(stats)
        if progress_cb is not None:
            progress_cb(stats)

    report.wall_time = time.perf_counter() - started
    return model, report


class BlockCheck(NamedTuple):
    """Worst coordinate of one block in a gradient check"""

    block: str
    max_relative_error: float
    index: Tuple[int, ...]
    analytic: float
    numeric: float


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


def grad_check(
    hidden_dims: Tuple[int, ...] = (4, 3),
    seed: int = 7,
    eps: float = 1e-6,
    window: int = constants.default_window,
    loss_mode: str = "mse",
    batch: int = 1,
    model: Optional[ModelParams] = None,
) -> List[BlockCheck]:
    """Compare BPTT gradients against central differences on a small random
    problem, coordinate by coordinate. Returns the worst offender per block.

    The problem is a single window whose target sits far from the initial
    output, which keeps every coordinate well above the roundoff floor of
    the differences."""
    if not eps > 0:
        raise ConfigError(f"finite-difference step must be positive, got {eps}")

    rng = np.random.Generator(np.random.PCG64(seed))
    if model is None:
        model = init_params(hidden_dims, seed, loss_mode=loss_mode, window_length=window)
    windows = rng.uniform(0.0, 1.0, size=(batch, window))
    outputs, _ = forward_batch(model, windows)
    if model.loss_mode == "bce":
        targets = np.where(outputs < 0.5, 1.0, 0.0)
    else:
        targets = outputs + 1.0

    def loss_of(candidate: ModelParams) -> float:
        output, _ = forward_batch(candidate, windows)
        return compute_loss(output, targets, candidate.loss_mode)[0]

    _, analytic = train_batch(model, windows, targets, model.loss_mode)
    blocks = dict(model.named_blocks())
    results = []
    for name, block in blocks.items():
        worst = BlockCheck(name, 0.0, (), 0.0, 0.0)
        for index in np.ndindex(block.shape):
            original = block[index]
            perturbed = block.copy()
            perturbed[index] = original + eps
            plus = loss_of(model.with_blocks({**blocks, name: perturbed}))
            perturbed[index] = original - eps
            minus = loss_of(model.with_blocks({**blocks, name: perturbed}))
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(analytic[name][index])
            error = relative_error(exact, numeric)
            if error > worst.max_relative_error or not worst.index:
                worst = BlockCheck(name, error, tuple(int(i) for i in index), exact, numeric)
        logger.info(
            "%s: max relative error %.3e at %s", name, worst.max_relative_error, worst.index
        )
        results.append(worst)
    return results
