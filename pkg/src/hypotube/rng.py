"""Counter-based random streams and the block-parallel work pool.

Paths are grouped in fixed-size blocks.  Block ``k`` draws from a Philox
generator keyed by ``SeedSequence(seed, spawn_key=(k,))``, so every path's
noise depends only on ``(seed, path index, block size)`` and never on the
thread that happens to run it.  Block results are returned in block order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

T = TypeVar("T")

DEFAULT_BLOCK = 1024


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def thread_count(requested: Optional[int] = None) -> int:
    """Explicit request, else ``HYPOTUBE_THREADS``, else the CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("HYPOTUBE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def map_blocks(
    fn: Callable[[np.random.Generator, int, int], T],
    n_paths: int,
    seed: int,
    block_size: int = DEFAULT_BLOCK,
    threads: Optional[int] = None,
) -> List[T]:
    """Run ``fn(generator, first_path, count)`` over all blocks, in block order."""
    starts = list(range(0, n_paths, block_size))

    def run(k):
        start = starts[k]
        return fn(block_generator(seed, k), start, min(block_size, n_paths - start))

    workers = min(thread_count(threads), len(starts))
    if workers <= 1:
        return [run(k) for k in range(len(starts))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(starts))))
