"""Discretized kernels on [0, 1]^p.

A kernel is a step function that is constant on products of grid cells.  Its
coefficients are stored densely (``m**p`` entries) together with the grid's
per-cell measures, so base grids and doubled grids share one code path.

Order-0 results (full contractions) are plain floats.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_BUDGET = 2**24


class GridMismatchError(ValueError):
    """Two objects live on different grids."""


class OrderMismatchError(ValueError):
    """Kernel orders are incompatible for the requested operation."""


class BudgetExceededError(MemoryError):
    """A dense tensor would exceed the configured entry budget."""


def tensor_budget() -> int:
    """Maximum number of dense entries; ``CHAOSLAB_BUDGET`` overrides the default."""
    raw = os.environ.get("CHAOSLAB_BUDGET")
    if raw is None:
        return DEFAULT_BUDGET
    try:
        value = int(float(raw))
    except ValueError as exc:
        raise ValueError(f"CHAOSLAB_BUDGET must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError("CHAOSLAB_BUDGET must be positive")
    return value


def check_budget(m: int, order: int) -> None:
    size = m**order
    budget = tensor_budget()
    if size > budget:
        raise BudgetExceededError(
            f"dense kernel of order {order} on {m} cells needs {size} entries "
            f"(budget {budget}; set CHAOSLAB_BUDGET to raise it)"
        )


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Finite partition of [0, 1] into cells with positive measures.

    A doubled grid has ``2m`` cells; cell ``i`` and ``i + m`` carry the same
    measure, the first ``m`` cells form the first half.
    """

    measures: np.ndarray
    doubled: bool = False

    def __post_init__(self) -> None:
        mu = np.asarray(self.measures, dtype=np.float64)
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError("grid measures must be a non-empty 1-d array")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise ValueError("grid cell measures must be finite and strictly positive")
        if self.doubled:
            if mu.size % 2:
                raise ValueError("a doubled grid needs an even number of cells")
            half = mu.size // 2
            if not np.array_equal(mu[:half], mu[half:]):
                raise ValueError("doubled grid halves must carry equal measures")
        object.__setattr__(self, "measures", _readonly(mu))

    @classmethod
    def uniform(cls, m: int) -> "Grid":
        if m < 1:
            raise ValueError("cell count must be positive")
        return cls(np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return int(self.measures.size)

    @property
    def half_size(self) -> int:
        if not self.doubled:
            raise GridMismatchError("grid is not doubled")
        return self.m // 2

    def double(self) -> "Grid":
        """Grid carrying two independent copies of the noise."""
        if self.doubled:
            raise GridMismatchError("grid is already doubled")
        return Grid(np.concatenate([self.measures, self.measures]), doubled=True)

    def base(self) -> "Grid":
        """The base grid of a doubled grid (its first half)."""
        return Grid(self.measures[: self.half_size])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.doubled == other.doubled and np.array_equal(self.measures, other.measures)

    def __hash__(self) -> int:
        return hash((self.doubled, self.measures.tobytes()))

    def __repr__(self) -> str:
        kind = "doubled " if self.doubled else ""
        return f"Grid({kind}m={self.m})"

    def to_dict(self) -> dict:
        return {"m": self.m, "measures": self.measures.tolist(), "doubled": self.doubled}

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        measures = data.get("measures")
        if measures is None:
            grid = cls.uniform(int(data["m"]))
            measures = grid.measures
        if "m" in data and int(data["m"]) != len(measures):
            raise ValueError("grid 'm' does not match the number of measures")
        return cls(np.asarray(measures, dtype=np.float64), doubled=bool(data.get("doubled", False)))


@dataclass(frozen=True, eq=False)
class Kernel:
    """Coefficients of a step function on the ``p``-fold product of a grid.

    ``coeffs[i1, ..., ip]`` is the value of the function on the cell product
    ``cell_i1 x ... x cell_ip``.
    """

    grid: Grid
    coeffs: np.ndarray
    symmetric: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.coeffs, dtype=np.float64)
        if arr.ndim < 1:
            raise OrderMismatchError("kernel order must be at least 1")
        if arr.shape != (self.grid.m,) * arr.ndim:
            raise GridMismatchError(
                f"coefficient shape {arr.shape} does not match a grid of {self.grid.m} cells"
            )
        check_budget(self.grid.m, arr.ndim)
        if not np.all(np.isfinite(arr)):
            raise ValueError("kernel coefficients must be finite")
        object.__setattr__(self, "coeffs", _readonly(arr))

    @property
    def order(self) -> int:
        return self.coeffs.ndim

    def __add__(self, other: "Kernel") -> "Kernel":
        _check_same(self, other)
        return Kernel(self.grid, self.coeffs + other.coeffs, self.symmetric and other.symmetric)

    def __sub__(self, other: "Kernel") -> "Kernel":
        _check_same(self, other)
        return Kernel(self.grid, self.coeffs - other.coeffs, self.symmetric and other.symmetric)

    def __neg__(self) -> "Kernel":
        return Kernel(self.grid, -self.coeffs, self.symmetric)

    def __mul__(self, c: float) -> "Kernel":
        return Kernel(self.grid, float(c) * self.coeffs, self.symmetric)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Kernel(order={self.order}, m={self.grid.m}, symmetric={self.symmetric})"

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        """Check permutation invariance; exhaustive up to order 4, sampled beyond."""
        p = self.order
        perms = list(itertools.permutations(range(p)))
        if p > 4:
            rng = np.random.default_rng(0)
            perms = [tuple(rng.permutation(p)) for _ in range(24)]
        scale = max(1.0, float(np.max(np.abs(self.coeffs))))
        return all(
            np.allclose(np.transpose(self.coeffs, perm), self.coeffs, rtol=0.0, atol=atol * scale)
            for perm in perms
        )

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "order": self.order,
            "coeffs": self.coeffs.ravel(order="C").tolist(),
            "symmetric": self.symmetric,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Kernel":
        """Inverse of :meth:`to_dict`; coefficients are row-major over cell tuples."""
        grid = Grid.from_dict(data["grid"])
        order = int(data["order"])
        if order < 1:
            raise OrderMismatchError("kernel order must be at least 1")
        flat = np.asarray(data["coeffs"], dtype=np.float64)
        if flat.ndim != 1 or flat.size != grid.m**order:
            raise ValueError(
                f"expected {grid.m**order} coefficients for order {order} on {grid.m} cells, "
                f"got {flat.size}"
            )
        kernel = cls(grid, flat.reshape((grid.m,) * order), bool(data.get("symmetric", False)))
        if kernel.symmetric and not kernel.is_symmetric(atol=1e-10):
            raise ValueError("kernel is flagged symmetric but its coefficients are not")
        return kernel


def _check_same(f: Kernel, g: Kernel) -> None:
    if f.grid != g.grid:
        raise GridMismatchError("kernels live on different grids")
    if f.order != g.order:
        raise OrderMismatchError(f"orders differ: {f.order} vs {g.order}")


def zeros(grid: Grid, order: int) -> Kernel:
    return Kernel(grid, np.zeros((grid.m,) * order), symmetric=True)


def symmetrize(f: Kernel) -> Kernel:
    """Average ``f`` over all permutations of its arguments.

    Idempotent; a kernel already flagged symmetric is returned as is.
    """
    if f.symmetric:
        return f
    p = f.order
    acc = np.zeros_like(f.coeffs)
    for perm in itertools.permutations(range(p)):
        acc += np.transpose(f.coeffs, perm)
    return Kernel(f.grid, acc / math.factorial(p), symmetric=True)


def shuffle_symmetrize(arr: np.ndarray, k: int) -> np.ndarray:
    """Symmetrize an array that is already symmetric in its first ``k`` and last ``n - k`` axes.

    Only the ``C(n, k)`` shuffles need averaging in that case.
    """
    n = arr.ndim
    if k == 0 or k == n:
        return np.array(arr, dtype=np.float64, copy=True)
    acc = np.zeros(arr.shape, dtype=np.float64)
    count = 0
    for chosen in itertools.combinations(range(n), k):
        rest = [i for i in range(n) if i not in chosen]
        acc += np.transpose(arr, np.argsort(list(chosen) + rest))
        count += 1
    acc /= count
    return acc


def inner(f: Kernel, g: Kernel) -> float:
    """Measure-weighted inner product of two kernels of the same order."""
    _check_same(f, g)
    return float(np.sum(_weight(f.coeffs, f.grid.measures, f.order) * g.coeffs))


def norm(f: Kernel) -> float:
    return math.sqrt(max(inner(f, f), 0.0))


def _weight(arr: np.ndarray, mu: np.ndarray, naxes: int) -> np.ndarray:
    """Multiply the last ``naxes`` axes of ``arr`` by the cell measures."""
    out = arr
    nd = arr.ndim
    for ax in range(nd - naxes, nd):
        shape = [1] * nd
        shape[ax] = mu.size
        out = out * mu.reshape(shape)
    return out


def contract_arrays(a: np.ndarray, b: np.ndarray, r: int, mu: np.ndarray) -> np.ndarray:
    """Contract the last ``r`` axes of ``a`` against the last ``r`` axes of ``b``."""
    if r == 0:
        return np.multiply.outer(a, b)
    aw = _weight(a, mu, r)
    axes_a = list(range(a.ndim - r, a.ndim))
    axes_b = list(range(b.ndim - r, b.ndim))
    return np.tensordot(aw, b, axes=(axes_a, axes_b))


def contract(f: Kernel, g: Kernel, r: int) -> Kernel | float:
    """The ``r``-th contraction of ``f`` and ``g``.

    ``(f (x)_r g)(x, y) = sum_u f(x, u) g(y, u) prod(measure of u-cells)``, where
    ``u`` runs over the last ``r`` arguments of each kernel.  The result has
    order ``p + q - 2r`` and is not symmetrized.  A full contraction
    (``r == p == q``) returns a float.

    Examples
    --------
    >>> grid = Grid(np.array([0.5, 0.5]))
    >>> contract(Kernel(grid, np.array([1.0, 2.0])), Kernel(grid, np.array([3.0, 4.0])), 1)
    5.5
    """
    if f.grid != g.grid:
        raise GridMismatchError("kernels live on different grids")
    p, q = f.order, g.order
    if not 0 <= r <= min(p, q):
        raise ValueError(f"contraction index r={r} outside [0, {min(p, q)}]")
    out_order = p + q - 2 * r
    if out_order == 0:
        return float(np.sum(_weight(f.coeffs, f.grid.measures, p) * g.coeffs))
    check_budget(f.grid.m, out_order)
    arr = contract_arrays(f.coeffs, g.coeffs, r, f.grid.measures)
    return Kernel(f.grid, arr)


def tensor(f: Kernel, g: Kernel) -> Kernel:
    out = contract(f, g, 0)
    assert isinstance(out, Kernel)
    return out


@dataclass(frozen=True, eq=False)
class CellMap:
    """Linear map sending source cell ``s`` to ``sum_t matrix[t, s] * (target cell t)``."""

    source: Grid
    target: Grid
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.shape != (self.target.m, self.source.m):
            raise GridMismatchError(
                f"cell map matrix has shape {mat.shape}, expected {(self.target.m, self.source.m)}"
            )
        object.__setattr__(self, "matrix", _readonly(mat))

    def is_isometry(self, atol: float = 1e-12) -> bool:
        """True when columns are orthonormal with respect to the cell measures."""
        gram = self.matrix.T @ (self.target.measures[:, None] * self.matrix)
        return bool(np.allclose(gram, np.diag(self.source.measures), rtol=0.0, atol=atol))


def push_forward(A: CellMap, f: Kernel) -> Kernel:
    """Apply ``A`` along every argument of ``f``."""
    if f.grid != A.source:
        raise GridMismatchError("kernel grid does not match the cell map's source grid")
    check_budget(A.target.m, f.order)
    arr = f.coeffs
    for ax in range(f.order):
        arr = np.moveaxis(np.tensordot(A.matrix, arr, axes=([1], [ax])), 0, ax)
    return Kernel(A.target, arr, f.symmetric)


def restrict_support(f: Kernel, cells: Iterable[int]) -> Kernel:
    """Keep a coefficient iff every coordinate lies in ``cells``; zero the rest."""
    idx = np.asarray(sorted(set(int(c) for c in cells)), dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= f.grid.m):
        raise IndexError(f"cell index out of range for a grid of {f.grid.m} cells")
    mask = np.zeros(f.grid.m, dtype=np.float64)
    mask[idx] = 1.0
    arr = f.coeffs
    for ax in range(f.order):
        shape = [1] * f.order
        shape[ax] = f.grid.m
        arr = arr * mask.reshape(shape)
    return Kernel(f.grid, arr, f.symmetric)


def indicator(grid: Grid, cells: Sequence[int]) -> Kernel:
    """Kernel equal to 1 on a single cell product and 0 elsewhere."""
    arr = np.zeros((grid.m,) * len(cells))
    arr[tuple(cells)] = 1.0
    return Kernel(grid, arr)
