"""Worker-count setting and an order-preserving block map.

Every parallel reduction in the package splits work into blocks whose
boundaries do not depend on the worker count, and combines block results in
block order, so outputs are bit-identical for any number of threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def map_blocks(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    items = list(items)
    if _threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, items))
