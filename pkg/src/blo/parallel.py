"""Thread-level parallel map with fixed-order reduction.

BLO_THREADS caps the worker count globally. Results always come back in
input order and each item is computed by the identical single-item code
path, so outputs are bit-identical no matter how many threads run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def thread_cap(requested: int | None = None) -> int:
    cap = os.environ.get("BLO_THREADS")
    limit = int(cap) if cap else None
    threads = requested if requested is not None else 1
    if limit is not None:
        threads = min(threads, limit)
    return max(1, threads)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    items = list(items)
    threads = thread_cap(threads)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
