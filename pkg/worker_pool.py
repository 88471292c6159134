"""
Order-preserving parallel map over worker processes
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count from an explicit value, LAKE_WORKERS, or the CPU count"""
    if workers is not None:
        return max(1, int(workers))
    env_value = os.getenv('LAKE_WORKERS')
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logger.warning(f"Ignoring non-integer LAKE_WORKERS={env_value!r}")
    return os.cpu_count() or 1


def _run_chunk(func: Callable[[T], R], chunk: Sequence[T]) -> List[R]:
    return [func(item) for item in chunk]


class WorkerPool:
    """Process pool kept open across several maps.

    Use as a context manager. With workers <= 1 no processes are started and
    every map runs in the calling process.
    """

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._executor: Optional[ProcessPoolExecutor] = None

    def __enter__(self) -> 'WorkerPool':
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
            logger.debug(f"Started pool of {self.workers} workers")
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()
        return False

    @property
    def active(self) -> bool:
        return self._executor is not None

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def map(self, func: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Apply func to every item and return results in input order.

        Items are split into contiguous chunks, one future per chunk, and the
        futures are collected in submission order. func and items must be
        picklable when the pool is active.
        """
        items = list(items)
        if not items:
            return []
        if self._executor is None or len(items) == 1:
            return _run_chunk(func, items)

        workers = min(self.workers, len(items))
        # a few chunks per worker keeps the pool busy when runs differ in cost
        chunk_size = max(1, len(items) // (workers * 4))
        chunks = [items[i:i + chunk_size] for i in range(0, len(items), chunk_size)]
        logger.debug(f"Mapping {len(items)} items over {workers} workers in {len(chunks)} chunks")

        results: List[R] = []
        futures = [self._executor.submit(_run_chunk, func, chunk) for chunk in chunks]
        for future in futures:
            results.extend(future.result())
        return results


def parallel_map(func: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """One-off order-preserving map on a pool that lives for this call only.

    Args:
        func: Function applied to each item
        items: Inputs
        workers: Number of worker processes

    Returns:
        List of results, same order as items
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return _run_chunk(func, items)
    with WorkerPool(min(workers, len(items))) as pool:
        return pool.map(func, items)
