"""Stacked LSTM with a linear regression head: parameters, initialization,
forward pass and the model file format.

Each layer holds twelve blocks, four gates (input i, forget f, output o and
candidate c) times three blocks (input weights W, recurrent weights V and
bias b):

    i = sigmoid(W_i x + V_i h_prev + b_i)
    f = sigmoid(W_f x + V_f h_prev + b_f)
    o = sigmoid(W_o x + V_o h_prev + b_o)
    g = tanh(W_c x + V_c h_prev + b_c)
    c = f * c_prev + i * g
    h = o * tanh(c)

A window of W values is fed one value per step through the stack, starting
from zero state; the head maps the top layer's last hidden state to the
prediction. In `bce` mode the head output goes through a sigmoid.

All arithmetic is float64. Arrays of hidden vectors may carry a leading batch
axis, so the same code runs one window or many.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import io
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, TextIO, Tuple

import numpy as np
import numpy.typing as npt

import prognost.constants as constants
from prognost.errors import (
    ConfigError,
    DimensionError,
    ModelCorruptError,
    ModelFormatError,
    ModelVersionError,
)
from prognost.preprocess import MinMaxScaler
from prognost.util import format_float

Array = npt.NDArray[np.float64]

GATES = ("i", "f", "o", "c")
BLOCK_NAMES = tuple(f"{kind}{gate}" for gate in GATES for kind in ("W", "V", "b"))
HEAD_BLOCK = "Wr"


def sigmoid(x: Array) -> Array:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


@dataclass(frozen=True, eq=False)
class LayerParams:
    """Gate weights of one LSTM layer, keyed by block name (Wi, Vi, bi, ...)"""

    blocks: Dict[str, Array]

    def __post_init__(self) -> None:
        missing = set(BLOCK_NAMES) - set(self.blocks)
        if missing:
            raise DimensionError(f"layer is missing blocks {sorted(missing)}")
        hidden, input_dim = self.blocks["Wi"].shape
        for gate in GATES:
            expected = {
                f"W{gate}": (hidden, input_dim),
                f"V{gate}": (hidden, hidden),
                f"b{gate}": (hidden,),
            }
            for name, shape in expected.items():
                if self.blocks[name].shape != shape:
                    raise DimensionError(
                        f"block {name} has shape {self.blocks[name].shape}, expected {shape}"
                    )
        for name, block in self.blocks.items():
            if not np.all(np.isfinite(block)):
                raise DimensionError(f"block {name} has non-finite entries")

    @property
    def hidden_dim(self) -> int:
        return int(self.blocks["Wi"].shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.blocks["Wi"].shape[1])

    def __getitem__(self, name: str) -> Array:
        return self.blocks[name]


@dataclass(frozen=True, eq=False)
class RegressionHead:
    """Output weights, output x hidden"""

    Wr: Array

    def __post_init__(self) -> None:
        if self.Wr.ndim != 2 or self.Wr.shape[0] != 1:
            raise DimensionError(f"head must have one output row, got shape {self.Wr.shape}")
        if not np.all(np.isfinite(self.Wr)):
            raise DimensionError("head has non-finite entries")


@dataclass(frozen=True, eq=False)
class ModelParams:
    layers: Tuple[LayerParams, ...]
    head: RegressionHead
    loss_mode: str = "mse"
    window_length: Optional[int] = None
    scaler: Optional[MinMaxScaler] = None

    def __post_init__(self) -> None:
        if not self.layers:
            raise DimensionError("model needs at least one layer")
        if self.layers[0].input_dim != 1:
            raise DimensionError(
                f"first layer takes {self.layers[0].input_dim} inputs, expected 1"
            )
        for below, above in zip(self.layers, self.layers[1:]):
            if above.input_dim != below.hidden_dim:
                raise DimensionError(
                    f"layer with input {above.input_dim} cannot follow a layer "
                    f"with hidden size {below.hidden_dim}"
                )
        if self.head.Wr.shape[1] != self.layers[-1].hidden_dim:
            raise DimensionError(
                f"head takes {self.head.Wr.shape[1]} inputs, top layer has "
                f"{self.layers[-1].hidden_dim}"
            )
        if self.loss_mode not in constants.loss_modes:
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}")

    @property
    def input_dim(self) -> int:
        return 1

    @property
    def hidden_dims(self) -> Tuple[int, ...]:
        return tuple(layer.hidden_dim for layer in self.layers)

    def named_blocks(self) -> Iterator[Tuple[str, Array]]:
        """All weight blocks in file order, named like `layer0.Wi` and `head.Wr`"""
        for index, layer in enumerate(self.layers):
            for name in BLOCK_NAMES:
                yield f"layer{index}.{name}", layer[name]
        yield f"head.{HEAD_BLOCK}", self.head.Wr

    def parameter_count(self) -> int:
        return sum(block.size for _, block in self.named_blocks())

    def with_blocks(self, blocks: Dict[str, Array]) -> ModelParams:
        """Copy of this model with its weights replaced by `blocks`, keyed as
        in `named_blocks`"""
        layers = tuple(
            LayerParams({name: blocks[f"layer{index}.{name}"] for name in BLOCK_NAMES})
            for index in range(len(self.layers))
        )
        return ModelParams(
            layers=layers,
            head=RegressionHead(blocks[f"head.{HEAD_BLOCK}"]),
            loss_mode=self.loss_mode,
            window_length=self.window_length,
            scaler=self.scaler,
        )

    def with_scaler(self, scaler: Optional[MinMaxScaler]) -> ModelParams:
        return ModelParams(
            self.layers, self.head, self.loss_mode, self.window_length, scaler
        )


class LstmState(NamedTuple):
    """Hidden and cell vectors of every layer"""

    h: List[Array]
    c: List[Array]


@dataclass
class CellCache:
    """Intermediates of one cell step kept for backpropagation"""

    x: Array
    h_prev: Array
    c_prev: Array
    i: Array
    f: Array
    o: Array
    g: Array
    c: Array
    tanh_c: Array
    pre: Dict[str, Array] = field(default_factory=dict)


@dataclass
class ForwardCache:
    """Everything `bptt_backward` needs from a forward pass. `steps[t][l]` is
    the cache of layer l at step t."""

    model: ModelParams
    windows: Array
    steps: List[List[CellCache]]
    head_input: Array
    output: Array


def _gate_rows(params: LayerParams, x: Array, h_prev: Array, gate: str) -> Array:
    return x @ params[f"W{gate}"].T + h_prev @ params[f"V{gate}"].T + params[f"b{gate}"]


def lstm_cell_forward(
    params: LayerParams, x: Array, h_prev: Array, c_prev: Array
) -> Tuple[Array, Array, CellCache]:
    """One LSTM step. x has trailing size input_dim, h_prev and c_prev
    trailing size hidden_dim; a leading batch axis is allowed."""
    if x.shape[-1] != params.input_dim:
        raise DimensionError(
            f"input of size {x.shape[-1]} for a layer expecting {params.input_dim}"
        )
    if h_prev.shape[-1] != params.hidden_dim or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"state of shape {h_prev.shape}/{c_prev.shape} for hidden size {params.hidden_dim}"
        )

    pre = {gate: _gate_rows(params, x, h_prev, gate) for gate in GATES}
    i = sigmoid(pre["i"])
    f = sigmoid(pre["f"])
    o = sigmoid(pre["o"])
    g = np.tanh(pre["c"])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = CellCache(x, h_prev, c_prev, i, f, o, g, c, tanh_c, pre)
    return h, c, cache


def zero_state(model: ModelParams, batch: int) -> LstmState:
    return LstmState(
        h=[np.zeros((batch, dim)) for dim in model.hidden_dims],
        c=[np.zeros((batch, dim)) for dim in model.hidden_dims],
    )


def _check_window_length(model: ModelParams, length: int) -> None:
    if length < 1:
        raise DimensionError("window must hold at least one value")
    if model.window_length is not None and length != model.window_length:
        raise DimensionError(
            f"window of length {length} for a model trained on windows of {model.window_length}"
        )


def forward_batch(model: ModelParams, windows: npt.ArrayLike) -> Tuple[Array, ForwardCache]:
    """Predict the value following each row of `windows` (batch x W)"""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2:
        raise DimensionError(f"windows must be a batch x W matrix, got shape {windows.shape}")
    batch, length = windows.shape
    _check_window_length(model, length)

    state = zero_state(model, batch)
    steps = []
    for t in range(length):
        x = windows[:, t : t + 1]
        step = []
        for index, layer in enumerate(model.layers):
            h, c, cache = lstm_cell_forward(layer, x, state.h[index], state.c[index])
            state.h[index] = h
            state.c[index] = c
            step.append(cache)
            x = h
        steps.append(step)

    head_input = state.h[-1]
    z = head_input @ model.head.Wr.T
    output = z[:, 0]
    if model.loss_mode == "bce":
        output = sigmoid(output)
    return output, ForwardCache(model, windows, steps, head_input, output)


def forward_window(model: ModelParams, window: Sequence[float]) -> Tuple[float, ForwardCache]:
    """Predict the value following a single window"""
    values = np.asarray(window, dtype=np.float64)
    if values.ndim != 1:
        raise DimensionError("a window is a 1-D sequence of values")
    output, cache = forward_batch(model, values[np.newaxis, :])
    return float(output[0]), cache


def predict(model: ModelParams, windows: npt.ArrayLike, batch_size: int = 512) -> Array:
    """Predictions for many windows, computed in chunks"""
    windows = np.asarray(windows, dtype=np.float64)
    if len(windows) == 0:
        return np.zeros(0)
    return np.concatenate(
        [
            forward_batch(model, windows[start : start + batch_size])[0]
            for start in range(0, len(windows), batch_size)
        ]
    )


def _uniform(rng: np.random.Generator, rows: int, cols: int) -> Array:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(
    hidden_dims: Sequence[int],
    seed: int,
    loss_mode: str = "mse",
    window_length: Optional[int] = None,
) -> ModelParams:
    """Glorot-uniform weights, zero biases except forget-gate biases of 1.

    Draws come from numpy's PCG64 generator seeded with `seed`, in file order:
    for each layer and gate, W then V; the head last. The same seed always
    yields the same bits."""
    if not hidden_dims:
        raise ConfigError("hidden_dims must name at least one layer")
    if any(dim < 1 for dim in hidden_dims):
        raise ConfigError(f"every layer needs at least one unit, got {list(hidden_dims)}")

    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    input_dim = 1
    for hidden in hidden_dims:
        blocks = {}
        for gate in GATES:
            blocks[f"W{gate}"] = _uniform(rng, hidden, input_dim)
            blocks[f"V{gate}"] = _uniform(rng, hidden, hidden)
            blocks[f"b{gate}"] = np.zeros(hidden)
        blocks["bf"] = np.full(hidden, constants.forget_bias)
        layers.append(LayerParams(blocks))
        input_dim = hidden
    head = RegressionHead(_uniform(rng, 1, input_dim))
    return ModelParams(tuple(layers), head, loss_mode=loss_mode, window_length=window_length)


def zeros_like(model: ModelParams) -> ModelParams:
    """Same architecture with every weight set to zero"""
    return model.with_blocks(
        {name: np.zeros_like(block) for name, block in model.named_blocks()}
    )


def _write_block(out: TextIO, name: str, block: Array) -> None:
    matrix = block.reshape(block.shape[0], -1) if block.ndim == 2 else block.reshape(1, -1)
    out.write(f"block {name} {matrix.shape[0]} {matrix.shape[1]}\n")
    for row in matrix:
        out.write(" ".join(format_float(value) for value in row) + "\n")


def dumps_model(model: ModelParams) -> str:
    """Serialize a model to the line-oriented text format"""
    out = io.StringIO()
    out.write(f"{constants.model_magic} {constants.model_version}\n")
    hidden = " ".join(str(dim) for dim in model.hidden_dims)
    out.write(
        f"input {model.input_dim} layers {len(model.layers)} hidden {hidden} "
        f"output 1 loss {model.loss_mode}\n"
    )
    if model.window_length is not None:
        out.write(f"window {model.window_length}\n")
    if model.scaler is not None:
        out.write(
            f"scaler {format_float(model.scaler.min)} {format_float(model.scaler.max)}\n"
        )
    for layer in model.layers:
        for name in BLOCK_NAMES:
            _write_block(out, name, layer[name])
    _write_block(out, HEAD_BLOCK, model.head.Wr)
    return out.getvalue()


def save_model(model: ModelParams, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as model_file:
        model_file.write(dumps_model(model))


class _LineReader:
    """Hands out lines together with the byte offset they start at"""

    def __init__(self, text: str):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.index = 0
        self.offset = 0
        self.size = len(text.encode("utf-8"))

    def peek(self) -> Optional[str]:
        return self.lines[self.index] if self.index < len(self.lines) else None

    def next(self, what: str) -> Tuple[str, int]:
        if self.index >= len(self.lines):
            raise ModelCorruptError(f"file ends where {what} was expected", self.offset)
        line = self.lines[self.index]
        offset = self.offset
        self.index += 1
        self.offset = min(self.offset + len(line.encode("utf-8")) + 1, self.size)
        return line, offset


def _parse_header(line: str, offset: int) -> Tuple[List[int], str]:
    tokens = line.split()
    try:
        if tokens[0] != "input" or int(tokens[1]) != 1 or tokens[2] != "layers":
            raise ValueError
        layer_count = int(tokens[3])
        if tokens[4] != "hidden":
            raise ValueError
        hidden = [int(token) for token in tokens[5 : 5 + layer_count]]
        rest = tokens[5 + layer_count :]
        if len(hidden) != layer_count or rest[0] != "output" or int(rest[1]) != 1:
            raise ValueError
        if rest[2] != "loss" or rest[3] not in constants.loss_modes or len(rest) != 4:
            raise ValueError
    except (IndexError, ValueError) as error:
        raise ModelCorruptError(f"malformed architecture line {line!r}", offset) from error
    return hidden, rest[3]


def _read_block(reader: _LineReader, name: str, shape: Tuple[int, ...]) -> Array:
    line, offset = reader.next(f"block {name}")
    rows = shape[0] if len(shape) == 2 else 1
    cols = shape[1] if len(shape) == 2 else shape[0]
    if line.split() != ["block", name, str(rows), str(cols)]:
        raise ModelCorruptError(
            f"expected 'block {name} {rows} {cols}', found {line!r}", offset
        )
    matrix = np.empty((rows, cols))
    for row in range(rows):
        line, offset = reader.next(f"row {row} of block {name}")
        tokens = line.split()
        if len(tokens) != cols:
            raise ModelCorruptError(
                f"row {row} of block {name} has {len(tokens)} values, expected {cols}", offset
            )
        try:
            matrix[row] = [float(token) for token in tokens]
        except ValueError as error:
            raise ModelCorruptError(f"bad number in block {name}", offset) from error
    return matrix.reshape(shape)


def loads_model(text: str) -> ModelParams:
    """Parse the text written by `dumps_model`"""
    reader = _LineReader(text)
    magic_line, offset = reader.next("magic line")
    tokens = magic_line.split()
    if len(tokens) != 2 or tokens[0] != constants.model_magic:
        raise ModelFormatError(f"not a model file (first line {magic_line[:40]!r})")
    if tokens[1] != constants.model_version:
        raise ModelVersionError(
            f"model file version {tokens[1]}, this program reads {constants.model_version}"
        )

    header, offset = reader.next("architecture line")
    hidden_dims, loss_mode = _parse_header(header, offset)
    if not hidden_dims or any(dim < 1 for dim in hidden_dims):
        raise ModelCorruptError(f"invalid layer sizes {hidden_dims}", offset)

    window_length = None
    scaler = None
    line = reader.peek()
    if line is not None and line.startswith("window "):
        line, offset = reader.next("window line")
        try:
            (window_length,) = (int(token) for token in line.split()[1:])
        except ValueError as error:
            raise ModelCorruptError(f"malformed window line {line!r}", offset) from error
    line = reader.peek()
    if line is not None and line.startswith("scaler "):
        line, offset = reader.next("scaler line")
        try:
            low, high = (float(token) for token in line.split()[1:])
            scaler = MinMaxScaler(min=low, max=high)
        except ValueError as error:
            raise ModelCorruptError(f"malformed scaler line {line!r}", offset) from error

    layers = []
    input_dim = 1
    for hidden in hidden_dims:
        shapes = {
            **{f"W{gate}": (hidden, input_dim) for gate in GATES},
            **{f"V{gate}": (hidden, hidden) for gate in GATES},
            **{f"b{gate}": (hidden,) for gate in GATES},
        }
        blocks = {name: _read_block(reader, name, shapes[name]) for name in BLOCK_NAMES}
        layers.append(LayerParams(blocks))
        input_dim = hidden
    head = RegressionHead(_read_block(reader, HEAD_BLOCK, (1, input_dim)))
    if reader.peek() is not None:
        raise ModelCorruptError("unexpected content after the head block", reader.offset)
    return ModelParams(tuple(layers), head, loss_mode, window_length, scaler)


def load_model(path: str) -> ModelParams:
    with open(path, "rb") as model_file:
        raw = model_file.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as error:
        raise ModelFormatError(f"{path} is not a UTF-8 model file") from error
    return loads_model(text)
