"""Counter-based Gaussian streams keyed by (master seed, block index).

Draws are cut into fixed-size blocks and block ``b`` always comes from the
Philox stream keyed by ``(seed, b)``, so a batch is identical no matter how many
workers produce it or in which order they finish.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

GENERATOR_ID = "philox4x64-10"
DEFAULT_BLOCK = 2**14

T = TypeVar("T")


def block_rng(seed: int, block: int) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a non-negative 64-bit integer")
    key = np.array([seed, block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def block_sizes(N: int, block_size: int = DEFAULT_BLOCK) -> list[int]:
    full, rest = divmod(N, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(
    fn: Callable[[np.random.Generator, int, int], T],
    seed: int,
    N: int,
    block_size: int = DEFAULT_BLOCK,
    workers: int = 1,
) -> list[T]:
    """Apply ``fn(rng, block_index, rows)`` to every block; results in block order."""
    sizes = block_sizes(N, block_size)

    def run(b: int) -> T:
        return fn(block_rng(seed, b), b, sizes[b])

    if workers <= 1 or len(sizes) <= 1:
        return [run(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(sizes))))
