"""
Worker pools for per-utterance and per-chunk work.

Results always come back in input order, so output does not depend on the
number of workers.
"""

import logging
import os
import sys
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import TypeVar

import psutil

logger = logging.getLogger("spoofbox")

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    """Physical core count, falling back to logical cores, then 1"""
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def lower_worker_priority() -> None:
    """Run worker processes at low priority so the machine stays responsive"""
    try:
        p = psutil.Process(os.getpid())
        if sys.platform == 'win32':
            _ = p.nice(psutil.BELOW_NORMAL_PRIORITY_CLASS)
        else:
            _ = p.nice(19)
    except Exception as e:
        logger.debug(f"Could not adjust worker priority: {e}")


def map_processes(func: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    """Ordered map over a process pool; runs inline when workers <= 1"""
    work = list(items)
    if workers <= 1 or len(work) <= 1:
        return [func(item) for item in work]
    chunksize = max(1, len(work) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers, initializer=lower_worker_priority) as pool:
        return list(pool.map(func, work, chunksize=chunksize))


def map_threads(func: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    """Ordered map over a thread pool, for numpy work that releases the GIL"""
    work = list(items)
    if workers <= 1 or len(work) <= 1:
        return [func(item) for item in work]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, work))
