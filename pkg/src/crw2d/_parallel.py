from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")

THREADS_ENV = "CRW2D_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def ordered_map(fn: Callable[..., T], tasks: Sequence, threads: int | None = None) -> list[T]:
    """Run ``fn(*task)`` for every task; results come back in task order.

    The numba kernels release the GIL, so a thread pool gives real
    parallelism. Output order never depends on the thread count.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))
