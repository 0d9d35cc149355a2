"""Misc. utility functions"""

from concurrent.futures import ThreadPoolExecutor
import math
import os
from typing import Callable, Iterable, List, Optional, TypeVar

import prognost.constants as constants
from prognost.errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")


def format_float(value: float) -> str:
    """Shortest decimal string that round-trips to the same 64-bit float.
    Integral values drop the trailing ".0"."""
    value = float(value)
    if not math.isfinite(value):
        return repr(value)
    text = repr(value)
    if text.endswith(".0"):
        return text[:-2]
    return text


def thread_count() -> int:
    """Size of the worker pool, capped by PROGNOST_THREADS when set"""
    raw = os.environ.get(constants.threads_env_var)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        count = int(raw)
    except ValueError as error:
        raise ConfigError(
            f"{constants.threads_env_var} must be a positive integer, got {raw!r}"
        ) from error
    if count < 1:
        raise ConfigError(f"{constants.threads_env_var} must be at least 1")
    return count


def parallel_map(
    func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None
) -> List[R]:
    """Apply func to every item on a thread pool. Results come back in input
    order, so the output is the same as a sequential map."""
    items = list(items)
    workers = min(threads or thread_count(), max(len(items), 1))
    if workers == 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))
