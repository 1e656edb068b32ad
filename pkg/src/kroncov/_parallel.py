"""Replicate seeding and order-preserving parallel map."""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable

import numpy as np

THREADS_ENV = "KRONCOV_THREADS"


def replicate_rng(seed: int, tag: str, index: int, *extra: int) -> np.random.Generator:
    """Independent stream for one replicate, fixed by ``(seed, tag, index, *extra)``.

    Streams never depend on how replicates are scheduled across threads.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode()), int(index), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Iterable, threads: int | None = None) -> list:
    threads = default_threads() if threads is None else max(1, int(threads))
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
