"""Process-pool fan-out for restarts, grid candidates and replicates."""

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

T = TypeVar('T')
R = TypeVar('R')


def default_threads() -> int:
    """Available parallelism of the host."""
    return os.cpu_count() or 1


def parallel_map(func: Callable[[T], R],
                 items: Iterable[T],
                 threads: int = 1,
                 progress: Optional[Callable[..., Iterable[R]]] = None) -> List[R]:
    """Apply ``func`` to every item, keeping input order in the result.

    With ``threads <= 1`` (or a single item) everything runs in-process, so
    results never depend on the worker count.

    Args:
        progress: Optional wrapper such as ``tqdm``, called as
            ``progress(results, total=n)`` around the lazily produced results.
    """
    items = list(items)

    def track(results: Iterable[R]) -> List[R]:
        return list(progress(results, total=len(items)) if progress is not None else results)

    if threads <= 1 or len(items) <= 1:
        return track(func(item) for item in items)
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return track(pool.map(func, items))
