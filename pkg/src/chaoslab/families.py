"""Named kernel families used by the experiments and the CLI."""
from __future__ import annotations

import itertools
import math

import numpy as np

from .grid_kernel import Grid, Kernel, inner, symmetrize
from .stein_bounds import ChaosVector


class BlockMismatchError(ValueError):
    """Number of blocks does not divide the number of cells."""


def blocks(m: int, n: int) -> list[np.ndarray]:
    """Partition ``range(m)`` into ``n`` contiguous equal blocks."""
    if n < 1 or m % n:
        raise BlockMismatchError(f"{n} blocks do not divide a grid of {m} cells")
    size = m // n
    return [np.arange(k * size, (k + 1) * size) for k in range(n)]


def qvar(n: int, m: int | None = None) -> Kernel:
    """Quadratic-variation kernel: ``I_2`` of it is ``sum_k H_2(xi_k) / sqrt(2n)`` over ``n`` blocks.

    On a grid of ``m`` cells (``n | m``) the kernel equals ``sqrt(n/2)`` on the
    diagonal blocks ``Delta_k x Delta_k`` and 0 elsewhere; its variance is 1 and
    its fourth cumulant is ``12/n``.
    """
    m = n if m is None else m
    grid = Grid.uniform(m)
    arr = np.zeros((m, m))
    for blk in blocks(m, n):
        arr[np.ix_(blk, blk)] = math.sqrt(n / 2.0)
    return Kernel(grid, arr, symmetric=True)


def offdiag_rand(p: int, m: int, seed: int = 0) -> Kernel:
    """Random symmetric kernel vanishing whenever two arguments share a cell, unit variance."""
    if p > m:
        raise ValueError("a diagonal-free kernel needs p <= m")
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(m)
    f = symmetrize(Kernel(grid, rng.standard_normal((m,) * p))).coeffs.copy()
    for i, j in itertools.combinations(range(p), 2):
        shape = [1] * p
        shape[i] = shape[j] = m
        f = f * (1.0 - np.eye(m).reshape(shape))
    return _unit_variance(Kernel(grid, f, symmetric=True), p)


def random_symmetric(p: int, m: int, rng: np.random.Generator, scale: float = 1.0) -> Kernel:
    """Symmetrized Gaussian kernel (diagonals included)."""
    grid = Grid.uniform(m)
    return symmetrize(Kernel(grid, scale * rng.standard_normal((m,) * p)))


def gaussian(m: int) -> Kernel:
    """Order-1 kernel of ``B(1)``: an exactly standard Gaussian element."""
    return constant_kernel(m)


def constant_kernel(m: int, value: float = 1.0) -> Kernel:
    return Kernel(Grid.uniform(m), np.full(m, value), symmetric=True)


def pair2d(n: int = 8, m: int | None = None) -> ChaosVector:
    """Vector ``(B(1), qvar_n)`` with chaos orders ``(1, 2)``; identity covariance."""
    f2 = qvar(n, m)
    return ChaosVector([(1, constant_kernel(f2.grid.m)), (2, f2)])


def _unit_variance(f: Kernel, p: int) -> Kernel:
    var = math.factorial(p) * inner(f, f)
    if var == 0.0:
        raise ValueError("cannot normalize a zero kernel")
    return Kernel(f.grid, f.coeffs / math.sqrt(var), symmetric=True)
