"""Read IMS run-to-failure snapshot directories and generic CSV series into a
SnapshotSeries"""

from __future__ import annotations

import datetime
import logging
import math
import os
import re
from typing import Iterator, List, Optional

from dateutil import parser as date_parser
from dateutil import tz
import numpy as np
import pandas as pd

import prognost.constants as constants
import prognost.util as util
from prognost.errors import (
    ChannelIndexError,
    ConfigError,
    DomainError,
    EmptyDatasetError,
    ParseError,
    ValidationError,
)
from prognost.model.series import SnapshotFileRef, SnapshotMatrix, SnapshotSeries

logger = logging.getLogger(__name__)

MISSING_CELLS = {"", "nan", "NaN", "NA", "N/A", "null"}

_filename_re = re.compile(constants.ims_filename_pattern)


class ScanResult:
    """Snapshot files of one IMS test directory in recording order, plus the
    names that were skipped because they don't look like snapshots"""

    def __init__(self, refs: List[SnapshotFileRef], skipped: List[str]):
        self.refs = refs
        self.skipped = skipped

    def __iter__(self) -> Iterator[SnapshotFileRef]:
        return iter(self.refs)

    def __len__(self) -> int:
        return len(self.refs)

    def __getitem__(self, index: int) -> SnapshotFileRef:
        return self.refs[index]


def parse_snapshot_timestamp(name: str) -> Optional[float]:
    """UTC seconds since the epoch encoded in an IMS file name, or None"""
    if not _filename_re.match(name):
        return None
    try:
        moment = datetime.datetime.strptime(name, constants.ims_filename_format)
    except ValueError:
        return None
    return moment.replace(tzinfo=tz.UTC).timestamp()


def scan_ims_directory(directory: str) -> ScanResult:
    """List the snapshot files of an IMS test directory sorted by recording time"""
    refs = []
    skipped = []
    # sorted() so the skip report doesn't depend on listing order
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        timestamp = parse_snapshot_timestamp(name)
        if timestamp is None or not os.path.isfile(path):
            skipped.append(name)
            continue
        refs.append(SnapshotFileRef(path=path, timestamp=timestamp))

    for name in skipped:
        logger.warning("Skipping %s: not an IMS snapshot file", name)

    if not refs:
        raise EmptyDatasetError(f"No IMS snapshot files found in {directory}")

    refs.sort(key=lambda ref: ref.timestamp)
    return ScanResult(refs, skipped)


def parse_ims_file(content: str, expected_channels: int) -> SnapshotMatrix:
    """Parse the text of one snapshot file: one sample per line, channels
    separated by tabs or runs of whitespace"""
    rows = []
    for line_number, line in enumerate(content.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != expected_channels:
            raise ParseError(
                f"expected {expected_channels} columns, found {len(tokens)}",
                line=line_number,
            )
        try:
            row = [float(token) for token in tokens]
        except ValueError as error:
            raise ParseError(str(error), line=line_number) from error
        if not all(math.isfinite(value) for value in row):
            raise ParseError("non-finite sample", line=line_number)
        rows.append(row)

    if not rows:
        raise EmptyDatasetError("snapshot file contains no samples")

    warnings = []
    if len(rows) != constants.ims_rows_per_snapshot:
        warnings.append(
            f"{len(rows)} rows, expected {constants.ims_rows_per_snapshot}"
        )
    return SnapshotMatrix(np.array(rows, dtype=np.float64), tuple(warnings))


def format_ims_matrix(matrix: SnapshotMatrix) -> str:
    """Inverse of `parse_ims_file`: tab-separated rows at full precision"""
    return "".join(
        "\t".join(repr(float(value)) for value in row) + "\n"
        for row in matrix.samples
    )


def aggregate_snapshot(matrix: SnapshotMatrix, channel: int, method: str = "rms") -> float:
    """Reduce one channel of a snapshot to a single trend value"""
    if matrix.rows == 0:
        raise DomainError("cannot aggregate an empty snapshot")
    if not 0 <= channel < matrix.channels:
        raise ChannelIndexError(
            f"channel {channel} out of range for {matrix.channels}-channel snapshot"
        )
    column = matrix.samples[:, channel]
    if method == "rms":
        return float(np.sqrt(np.mean(column * column)))
    if method == "mean_abs":
        return float(np.mean(np.abs(column)))
    if method == "peak":
        return float(np.max(np.abs(column)))
    raise ConfigError(
        f"unknown aggregation {method!r}, expected one of {constants.aggregation_methods}"
    )


def load_ims_series(
    directory: str,
    expected_channels: int,
    channel: int,
    method: str = constants.default_aggregation,
    threads: Optional[int] = None,
) -> SnapshotSeries:
    """Scan, parse and aggregate a whole IMS test directory. Files are parsed
    on a thread pool; results are merged in timestamp order."""
    if not 0 <= channel < expected_channels:
        raise ChannelIndexError(
            f"channel {channel} out of range for {expected_channels} channels"
        )
    scan = scan_ims_directory(directory)

    def load_one(ref: SnapshotFileRef) -> float:
        with open(ref.path, encoding="ascii") as snapshot_file:
            try:
                matrix = parse_ims_file(snapshot_file.read(), expected_channels)
            except UnicodeDecodeError as error:
                raise ParseError(f"{ref.path}: not an ASCII snapshot file ({error.reason})") from error
            except ParseError as error:
                raise ParseError(f"{ref.path}: {error}") from error
        for warning in matrix.warnings:
            logger.warning("%s: %s", os.path.basename(ref.path), warning)
        return aggregate_snapshot(matrix, channel, method)

    values = util.parallel_map(load_one, scan.refs, threads=threads)
    logger.info(
        "Loaded %d snapshots from %s (channel %d, %s)",
        len(values),
        directory,
        channel,
        method,
    )
    return SnapshotSeries(
        np.array([ref.timestamp for ref in scan.refs]),
        np.array(values),
        source_label=os.path.basename(os.path.normpath(directory)),
        channel=channel,
    )


def _is_value(cell: str) -> bool:
    if cell.strip() in MISSING_CELLS:
        return True
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _parse_value(cell: str, row: int) -> float:
    if cell.strip() in MISSING_CELLS:
        return math.nan
    try:
        return float(cell)
    except ValueError as error:
        raise ParseError(f"non-numeric value {cell!r}", line=row) from error


def _parse_timestamp(cell: str, row: int) -> float:
    try:
        return float(cell)
    except ValueError:
        pass
    try:
        moment = date_parser.isoparse(cell.strip())
    except ValueError as error:
        raise ParseError(f"unreadable timestamp {cell!r}", line=row) from error
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=tz.UTC)
    return moment.timestamp()


def load_csv_series(
    path: str,
    value_column: int,
    timestamp_column: Optional[int] = None,
    delimiter: str = ",",
) -> SnapshotSeries:
    """Import a single-column series from a delimited text file.

    A header line is detected by its value cell failing to parse as a number.
    Missing cells become NaN. Without a timestamp column the row index is used.
    Timestamps may be numeric seconds or ISO-8601 date-times."""
    try:
        df = pd.read_csv(
            path,
            sep=delimiter,
            header=None,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError as error:
        raise EmptyDatasetError(f"{path} contains no rows") from error
    except (pd.errors.ParserError, UnicodeDecodeError) as error:
        raise ParseError(f"{path}: {error}") from error
    if df.empty:
        raise EmptyDatasetError(f"{path} contains no rows")

    needed = max(value_column, timestamp_column if timestamp_column is not None else 0)
    if needed >= df.shape[1]:
        raise ChannelIndexError(f"{path} has only {df.shape[1]} columns")

    first_row = 1
    if not _is_value(df.iat[0, value_column]):
        df = df.iloc[1:]
        first_row = 2
    if df.empty:
        raise EmptyDatasetError(f"{path} contains only a header")

    values = np.array(
        [
            _parse_value(cell, row)
            for row, cell in enumerate(df.iloc[:, value_column], start=first_row)
        ]
    )
    if timestamp_column is None:
        timestamps = np.arange(len(values), dtype=np.float64)
    else:
        timestamps = np.array(
            [
                _parse_timestamp(cell, row)
                for row, cell in enumerate(df.iloc[:, timestamp_column], start=first_row)
            ]
        )
        steps = np.diff(timestamps)
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 1
            raise ValidationError(
                f"{path}: timestamps not strictly increasing at row {bad + first_row}"
            )

    return SnapshotSeries(
        timestamps,
        values,
        source_label=os.path.basename(path),
        channel=value_column,
    )
