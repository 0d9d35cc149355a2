"""Main entry point: the command-line pipeline
ingest -> preprocess -> train -> evaluate, plus predict, grad-check and
gen-fixture"""

import argparse
import logging
import os
import sys
from typing import Any, Callable, Dict, List, NamedTuple, NoReturn, Optional, Sequence, Tuple

import prognost.constants as constants
from prognost.errors import (
    ConfigError,
    GradCheckFailedError,
    PrognostError,
    TrainingDivergedError,
    UsageError,
)
from prognost.evaluate import (
    PredictionTrace,
    one_step_predictions,
    persistence_baseline,
    write_metrics_csv,
    write_trace_csv,
)
from prognost.fixtures import FIXTURE_KINDS, make_fixture
from prognost.ingest import load_csv_series, load_ims_series
from prognost.model.config import TrainConfig
from prognost.model.network import forward_window, load_model, save_model
from prognost.model.series import SnapshotSeries, read_series_csv, write_series_csv
from prognost.preprocess import (
    fill_missing,
    fit_minmax,
    make_windows,
    prepare_dataset,
    remove_outliers,
    split_train_test,
    write_indexed_csv,
    write_windows_csv,
)
from prognost.train import EpochStats, grad_check, train
from prognost.util import format_float

logger = logging.getLogger(__name__)


class Flag(NamedTuple):
    names: Tuple[str, ...]
    options: Dict[str, Any]


class Command(NamedTuple):
    help: str
    flags: List[Flag]


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from error


def _float_list(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from error


def flag(*names: str, **options: Any) -> Flag:
    return Flag(names, options)


COMMANDS: Dict[str, Command] = {
    "ingest": Command(
        "Build a timestamp,value series from an IMS snapshot directory or a CSV file",
        [
            flag("--ims-dir", metavar="D", help="IMS test directory of snapshot files"),
            flag("--channels", type=int, default=4, metavar="N", help="columns per snapshot file (default 4)"),
            flag("--channel", type=int, default=0, metavar="C", help="0-based column of the bearing to follow (default 0)"),
            flag("--agg", choices=constants.aggregation_methods, default=constants.default_aggregation, help="per-snapshot aggregate (default rms)"),
            flag("--csv", metavar="F", help="delimited text file holding a single series"),
            flag("--value-col", type=int, metavar="V", help="0-based column of the values in --csv"),
            flag("--ts-col", type=int, metavar="T", help="0-based column of the timestamps in --csv (default: row index)"),
            flag("--delimiter", default=",", help="field delimiter of --csv (default ',')"),
            flag("--out", required=True, metavar="series.csv", help="output series CSV"),
        ],
    ),
    "preprocess": Command(
        "Fill gaps and remove outliers",
        [
            flag("--in", dest="input", required=True, metavar="series.csv", help="input series CSV"),
            flag("--out", required=True, metavar="clean.csv", help="output series CSV"),
            flag("--outlier-window", type=int, default=constants.default_outlier_window, help="odd rolling window length (default 11)"),
            flag("--outlier-k", type=float, default=constants.default_outlier_k, help="MAD multiple beyond which a point is replaced (default 5)"),
            flag("--max-gap", type=int, default=constants.default_max_gap, help="longest run of missing values to interpolate (default 3)"),
            flag("--windows-out", metavar="windows.csv", help="also write the w1..wW,target windows of the cleaned series"),
            flag("--indexed-out", metavar="indexed.csv", help="also write the cleaned series as index,value rows"),
            flag("--window", type=int, default=constants.default_window, metavar="W", help="window length for --windows-out (default 5)"),
        ],
    ),
    "train": Command(
        "Fit the stacked LSTM on the first part of a clean series",
        [
            flag("--in", dest="input", required=True, metavar="clean.csv", help="clean series CSV"),
            flag("--config", metavar="cfg.toml", help="TOML file of training parameters"),
            flag("--seed", type=int, help="random seed, overrides the config"),
            flag("--epochs", type=int, help="number of epochs, overrides the config"),
            flag("--dims", type=_int_list, metavar="128,64", help="hidden layer sizes, overrides the config"),
            flag("--init-model", metavar="M", help="start from this model instead of a fresh initialization"),
            flag("--model-out", required=True, metavar="M", help="output model file"),
            flag("--report-out", required=True, metavar="R.csv", help="per-epoch report CSV"),
        ],
    ),
    "evaluate": Command(
        "Score one-step-ahead predictions and export the trace",
        [
            flag("--model", required=True, metavar="M", help="model file"),
            flag("--in", dest="input", required=True, metavar="clean.csv", help="clean series CSV"),
            flag("--metrics-out", required=True, metavar="met.csv", help="metrics CSV"),
            flag("--trace-out", required=True, metavar="trace.csv", help="actual vs predicted trace CSV"),
            flag("--space", choices=("scaled", "original"), default="scaled", help="value space of metrics and trace (default scaled)"),
            flag("--ratio", type=float, default=constants.default_split_ratio, help="train fraction used when the model was trained (default 0.7)"),
            flag("--holdout", action="store_true", help="evaluate the whole series as test data"),
            flag("--refit-scaler", action="store_true", help="fit the scaler on this series instead of using the model's"),
            flag("--include-train", action="store_true", help="add training rows to the trace and metrics"),
            flag("--label", help="dataset label in the metrics CSV (default: input file name)"),
        ],
    ),
    "predict": Command(
        "Predict the value following one window",
        [
            flag("--model", required=True, metavar="M", help="model file"),
            flag("--window", required=True, type=_float_list, metavar="v1,...,vW", help="comma-separated window values"),
            flag("--space", choices=("scaled", "original"), default="scaled", help="value space of the window and the output (default scaled)"),
        ],
    ),
    "grad-check": Command(
        "Compare backpropagated gradients against central differences",
        [
            flag("--dims", type=_int_list, default=(4, 3), metavar="4,3", help="hidden layer sizes (default 4,3)"),
            flag("--seed", type=int, default=7, help="random seed (default 7)"),
            flag("--eps", type=float, default=1e-6, help="finite-difference step (default 1e-6)"),
            flag("--window", type=int, default=constants.default_window, metavar="W", help="window length (default 5)"),
            flag("--loss", choices=("mse", "bce", "both"), default="both", help="loss mode(s) to check (default both)"),
        ],
    ),
    "gen-fixture": Command(
        "Write a deterministic synthetic series",
        [
            flag("--kind", choices=FIXTURE_KINDS, required=True, help="sine or degradation"),
            flag("--n", type=int, required=True, metavar="N", help="number of points"),
            flag("--seed", type=int, default=0, help="noise seed of the degradation fixture (default 0)"),
            flag("--out", required=True, metavar="f.csv", help="output series CSV"),
        ],
    ),
}


class CliParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as exceptions"""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{message}; run '{self.prog} --help' for usage")


def build_parser() -> CliParser:
    parser = CliParser(
        prog=constants.app_name,
        description="LSTM vibration forecasting for bearing prognostics",
        allow_abbrev=False,
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug output"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, command in COMMANDS.items():
        subparser = subparsers.add_parser(
            name, help=command.help, description=command.help, allow_abbrev=False
        )
        for entry in command.flags:
            subparser.add_argument(*entry.names, **entry.options)
    return parser


def _series_label(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def cmd_ingest(args: argparse.Namespace) -> int:
    if (args.ims_dir is None) == (args.csv is None):
        raise UsageError("give exactly one of --ims-dir or --csv")
    if args.ims_dir is not None:
        series = load_ims_series(args.ims_dir, args.channels, args.channel, args.agg)
    else:
        if args.value_col is None:
            raise UsageError("--csv needs --value-col")
        series = load_csv_series(args.csv, args.value_col, args.ts_col, args.delimiter)
    write_series_csv(series, args.out)
    logger.info("Wrote %d points to %s", len(series), args.out)
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    series = read_series_csv(args.input, _series_label(args.input))
    series = fill_missing(series, args.max_gap)
    series, replaced = remove_outliers(series, args.outlier_window, args.outlier_k)
    write_series_csv(series, args.out)
    logger.info("Wrote %d points to %s (%d outliers replaced)", len(series), args.out, len(replaced))
    if args.windows_out is not None:
        write_windows_csv(make_windows(series, args.window), args.windows_out)
    if args.indexed_out is not None:
        write_indexed_csv(series, args.indexed_out)
    return 0


def _log_epoch(stats: EpochStats) -> None:
    logger.info(
        "epoch %d: train loss %s, test rmse %s",
        stats.epoch,
        format_float(stats.train_loss),
        format_float(stats.test_rmse),
    )


def cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    config = config.override(seed=args.seed, epochs=args.epochs, hidden_dims=args.dims)
    series = read_series_csv(args.input, _series_label(args.input)).require_finite()
    split, scaler = prepare_dataset(series, config.window, config.split_ratio)
    logger.info(
        "Training on %d windows, testing on %d (scaler min %s max %s)",
        len(split.train),
        len(split.test),
        format_float(scaler.min),
        format_float(scaler.max),
    )
    initial = load_model(args.init_model) if args.init_model else None
    try:
        model, report = train(split, config, initial=initial, progress_cb=_log_epoch)
    except TrainingDivergedError as error:
        error.report.write_csv(args.report_out)
        raise
    save_model(model.with_scaler(scaler), args.model_out)
    report.model_path = args.model_out
    report.write_csv(args.report_out)
    logger.info("Saved model to %s after %.1f s", args.model_out, report.wall_time)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    series = read_series_csv(args.input, _series_label(args.input)).require_finite()
    label = args.label or _series_label(args.input)
    scaler = fit_minmax(series) if args.refit_scaler else model.scaler
    if scaler is None:
        raise ConfigError("the model carries no scaler; pass --refit-scaler")
    window = model.window_length or constants.default_window
    windows = make_windows(series.with_values(scaler.forward(series.values)), window)

    if args.holdout:
        test, train_side = windows, None
    else:
        split = split_train_test(windows, args.ratio)
        test, train_side = split.test, split.train

    traces = []
    rows = []
    if train_side is not None and args.include_train:
        train_trace = one_step_predictions(model, train_side, scaler, args.space, split="train")
        traces.append(train_trace)
        rows.append((f"{label}-train", train_trace.metrics()))
    test_trace = one_step_predictions(model, test, scaler, args.space, split="test")
    traces.append(test_trace)
    rows.insert(0, (label, test_trace.metrics()))
    rows.append((f"{label}-persistence", persistence_baseline(test, scaler, args.space).metrics()))

    write_trace_csv(PredictionTrace.concat(traces), args.trace_out)
    write_metrics_csv(rows, args.metrics_out)
    for name, report in rows:
        logger.info("%s: rmse %s mae %s", name, format_float(report.rmse), format_float(report.mae))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    window: Sequence[float] = args.window
    if args.space == "original":
        if model.scaler is None:
            raise ConfigError("the model carries no scaler; original-space prediction is impossible")
        window = model.scaler.forward(window).tolist()
    value, _ = forward_window(model, window)
    if args.space == "original":
        assert model.scaler is not None
        value = float(model.scaler.inverse(value))
    print(format_float(value))
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    modes = ("mse", "bce") if args.loss == "both" else (args.loss,)
    worst = 0.0
    for mode in modes:
        for check in grad_check(args.dims, args.seed, args.eps, args.window, mode):
            print(f"{mode} {check.block} {check.max_relative_error:.3e}")
            worst = max(worst, check.max_relative_error)
    if worst > constants.grad_check_tolerance:
        raise GradCheckFailedError(
            f"max relative error {worst:.3e} exceeds {constants.grad_check_tolerance:g}"
        )
    return 0


def cmd_gen_fixture(args: argparse.Namespace) -> int:
    series: SnapshotSeries = make_fixture(args.kind, args.n, args.seed)
    write_series_csv(series, args.out)
    return 0


HANDLERS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "grad-check": cmd_grad_check,
    "gen-fixture": cmd_gen_fixture,
}


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code: 0 success, 1 usage error,
    2 data error, 3 numeric failure"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        # --help
        return int(exit_.code or 0)
    except UsageError as error:
        print(f"{constants.app_name}: error: {error}", file=sys.stderr)
        return error.exit_code

    _configure_logging(args.verbose)
    try:
        return HANDLERS[args.command](args)
    except PrognostError as error:
        print(f"{constants.app_name}: error: {error}", file=sys.stderr)
        return error.exit_code
    except OSError as error:
        print(f"{constants.app_name}: error: {error}", file=sys.stderr)
        return 2


def main() -> None:
    """Entry point"""
    sys.exit(run())


if __name__ == "__main__":
    main()
