"""Finite Wiener chaos expansions over a grid.

An expansion ``F = c + sum_q I_q(f_q)`` stores the constant ``c`` and one
symmetric kernel per order.  Products go through the product formula, so every
quantity computed here (moments, ``L``, carre du champ) is exact up to
floating point.  :func:`evaluate` realizes an expansion on concrete Gaussian
increments.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np
from numpy.polynomial import hermite_e

from .grid_kernel import (
    Grid,
    GridMismatchError,
    Kernel,
    check_budget,
    contract,
    contract_arrays,
    inner,
    shuffle_symmetrize,
    symmetrize,
)


def _product_coefficient(p: int, q: int, r: int) -> float:
    return math.factorial(r) * math.comb(p, r) * math.comb(q, r)


@dataclass(frozen=True, eq=False)
class ChaosExpansion:
    """``constant + sum_q I_q(terms[q])`` with symmetric kernels on a shared grid."""

    grid: Grid
    constant: float = 0.0
    terms: Mapping[int, Kernel] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for q in sorted(self.terms):
            kern = self.terms[q]
            if q < 1 or kern.order != q:
                raise ValueError(f"term stored under order {q} has kernel order {kern.order}")
            if kern.grid != self.grid:
                raise GridMismatchError("expansion terms must share the expansion grid")
            if not kern.symmetric:
                raise ValueError("expansions store symmetric kernels only; symmetrize first")
            clean[q] = kern
        if not math.isfinite(self.constant):
            raise ValueError("constant term must be finite")
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "terms", MappingProxyType(clean))

    @property
    def max_order(self) -> int:
        return max(self.terms, default=0)

    def __repr__(self) -> str:
        return f"ChaosExpansion(m={self.grid.m}, constant={self.constant:.6g}, orders={list(self.terms)})"

    def _combine(self, other: "ChaosExpansion", sign: float) -> "ChaosExpansion":
        if self.grid != other.grid:
            raise GridMismatchError("expansions live on different grids")
        terms = dict(self.terms)
        for q, g in other.terms.items():
            g = g if sign > 0 else -g
            terms[q] = terms[q] + g if q in terms else g
        return ChaosExpansion(self.grid, self.constant + sign * other.constant, terms)

    def __add__(self, other: "ChaosExpansion") -> "ChaosExpansion":
        return self._combine(other, 1.0)

    def __sub__(self, other: "ChaosExpansion") -> "ChaosExpansion":
        return self._combine(other, -1.0)

    def __neg__(self) -> "ChaosExpansion":
        return self.scale(-1.0)

    def scale(self, c: float) -> "ChaosExpansion":
        return ChaosExpansion(self.grid, c * self.constant, {q: c * f for q, f in self.terms.items()})

    def __mul__(self, c: float) -> "ChaosExpansion":
        return self.scale(float(c))

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "constant": self.constant,
            "terms": [{"order": q, "kernel": f.to_dict()} for q, f in self.terms.items()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChaosExpansion":
        terms = {}
        for item in data.get("terms", []):
            kern = Kernel.from_dict(item["kernel"])
            if int(item["order"]) != kern.order:
                raise ValueError("term order does not match its kernel")
            terms[kern.order] = symmetrize(kern)
        if "grid" in data:
            grid = Grid.from_dict(data["grid"])
        elif terms:
            grid = next(iter(terms.values())).grid
        else:
            raise ValueError("an expansion without terms needs an explicit grid")
        return cls(grid, float(data.get("constant", 0.0)), terms)


def constant(grid: Grid, c: float) -> ChaosExpansion:
    return ChaosExpansion(grid, c, {})


def from_kernel(p: int, f: Kernel) -> ChaosExpansion:
    """The multiple integral ``I_p(f)``; asymmetric ``f`` is symmetrized first."""
    if f.order != p:
        raise ValueError(f"kernel order {f.order} does not match p={p}")
    return ChaosExpansion(f.grid, 0.0, {p: symmetrize(f)})


def multiply(F: ChaosExpansion, G: ChaosExpansion, max_order: int | None = None) -> ChaosExpansion:
    """Product ``F * G`` via the product formula.

    ``I_p(f) I_q(g) = sum_r r! C(p,r) C(q,r) I_{p+q-2r}(f (x)~_r g)``; full
    contractions land in the constant.  Orders above ``max_order`` are skipped
    when it is given, which is exact for every lower order.
    """
    if F.grid != G.grid:
        raise GridMismatchError("expansions live on different grids")
    grid = F.grid
    mu = grid.measures
    const = F.constant * G.constant
    acc: dict[int, np.ndarray] = {}

    def add(order: int, arr: np.ndarray) -> None:
        if order in acc:
            acc[order] += arr
        else:
            acc[order] = np.array(arr, dtype=np.float64, copy=True)

    for q, g in G.terms.items():
        if F.constant and (max_order is None or q <= max_order):
            add(q, F.constant * g.coeffs)
    for p, f in F.terms.items():
        if G.constant and (max_order is None or p <= max_order):
            add(p, G.constant * f.coeffs)
    for p, f in F.terms.items():
        for q, g in G.terms.items():
            for r in range(min(p, q) + 1):
                n = p + q - 2 * r
                if max_order is not None and n > max_order:
                    continue
                coef = _product_coefficient(p, q, r)
                if n == 0:
                    const += coef * float(contract(f, g, r))
                    continue
                check_budget(grid.m, n)
                arr = contract_arrays(f.coeffs, g.coeffs, r, mu)
                add(n, coef * shuffle_symmetrize(arr, p - r))
    terms = {n: Kernel(grid, arr, symmetric=True) for n, arr in sorted(acc.items())}
    return ChaosExpansion(grid, const, terms)


def mean(F: ChaosExpansion) -> float:
    return F.constant


def expectation_product(F: ChaosExpansion, G: ChaosExpansion) -> float:
    """``E[F G]`` by the isometry: chaoses of different orders are orthogonal."""
    if F.grid != G.grid:
        raise GridMismatchError("expansions live on different grids")
    total = F.constant * G.constant
    for q, f in F.terms.items():
        g = G.terms.get(q)
        if g is not None:
            total += math.factorial(q) * inner(f, g)
    return total


def second_moment(F: ChaosExpansion) -> float:
    return expectation_product(F, F)


def variance(F: ChaosExpansion) -> float:
    return max(second_moment(F) - F.constant**2, 0.0)


def l2_distance(F: ChaosExpansion, G: ChaosExpansion) -> float:
    return math.sqrt(max(second_moment(F - G), 0.0))


def sym_contraction_norm2(f: Kernel, r: int) -> float:
    """``||f (x)~_r f||^2`` for a symmetric kernel ``f``."""
    p = f.order
    if r == p:
        return float(contract(f, f, r)) ** 2
    check_budget(f.grid.m, 2 * p - 2 * r)
    arr = shuffle_symmetrize(contract_arrays(f.coeffs, f.coeffs, r, f.grid.measures), p - r)
    return inner(Kernel(f.grid, arr), Kernel(f.grid, arr))


def fourth_moment_pure(p: int, f: Kernel) -> float:
    """``E[I_p(f)^4] = sum_r r!^2 C(p,r)^4 (2p-2r)! ||f (x)~_r f||^2``."""
    f = symmetrize(f)
    if f.order != p:
        raise ValueError(f"kernel order {f.order} does not match p={p}")
    return sum(
        math.factorial(r) ** 2 * math.comb(p, r) ** 4 * math.factorial(2 * p - 2 * r)
        * sym_contraction_norm2(f, r)
        for r in range(p + 1)
    )


def hypercontractivity_constant(p: int) -> float:
    """``c_{4,p}`` with ``E[F^4] <= c_{4,p} E[F^2]^2`` on the ``p``-th chaos."""
    return sum(
        math.factorial(r) ** 2 * math.comb(p, r) ** 4 * math.factorial(2 * p - 2 * r)
        for r in range(p + 1)
    ) / math.factorial(p) ** 2


def ou_generator(F: ChaosExpansion) -> ChaosExpansion:
    """Ornstein-Uhlenbeck generator: multiplies the order-``q`` term by ``-q``."""
    return ChaosExpansion(F.grid, 0.0, {q: -q * f for q, f in F.terms.items()})


def ou_semigroup(F: ChaosExpansion, t: float) -> ChaosExpansion:
    """``P_t F``: the order-``q`` term scaled by ``exp(-q t)``."""
    return ChaosExpansion(F.grid, F.constant, {q: math.exp(-q * t) * f for q, f in F.terms.items()})


def carre_du_champ(F: ChaosExpansion, G: ChaosExpansion) -> ChaosExpansion:
    """``Gamma(F, G) = (L(FG) - F LG - G LF) / 2``."""
    FG = multiply(F, G)
    out = ou_generator(FG) - multiply(F, ou_generator(G)) - multiply(G, ou_generator(F))
    return out.scale(0.5)


def gradient_product(f: Kernel, p: int, g: Kernel, q: int) -> ChaosExpansion:
    """``p q int I_{p-1}(f(x,.)) I_{q-1}(g(x,.)) dx`` through contractions.

    Equals ``sum_{r>=1} r r! C(p,r) C(q,r) I_{p+q-2r}(f (x)~_r g)``, i.e. the
    inner product of the Malliavin derivatives of ``I_p(f)`` and ``I_q(g)``.
    """
    f, g = symmetrize(f), symmetrize(g)
    if f.grid != g.grid:
        raise GridMismatchError("kernels live on different grids")
    grid = f.grid
    const = 0.0
    terms: dict[int, np.ndarray] = {}
    for r in range(1, min(p, q) + 1):
        n = p + q - 2 * r
        coef = r * _product_coefficient(p, q, r)
        if n == 0:
            const += coef * float(contract(f, g, r))
            continue
        check_budget(grid.m, n)
        arr = coef * shuffle_symmetrize(contract_arrays(f.coeffs, g.coeffs, r, grid.measures), p - r)
        terms[n] = terms[n] + arr if n in terms else arr
    return ChaosExpansion(grid, const, {n: Kernel(grid, a, symmetric=True) for n, a in sorted(terms.items())})


def gradient_inner(F: ChaosExpansion, G: ChaosExpansion) -> ChaosExpansion:
    """``<DF, DG>`` for general expansions, summing :func:`gradient_product` over term pairs."""
    if F.grid != G.grid:
        raise GridMismatchError("expansions live on different grids")
    total = constant(F.grid, 0.0)
    for p, f in F.terms.items():
        for q, g in G.terms.items():
            total = total + gradient_product(f, p, g, q)
    return total


def gradient_product_direct(f: Kernel, p: int, g: Kernel, q: int) -> ChaosExpansion:
    """Same quantity as :func:`gradient_product`, integrating cell by cell.

    For every cell ``x`` the slices ``f(x, .)`` and ``g(x, .)`` are turned into
    expansions of orders ``p - 1`` and ``q - 1``, multiplied, and summed with the
    cell measure as weight.
    """
    f, g = symmetrize(f), symmetrize(g)
    if f.grid != g.grid:
        raise GridMismatchError("kernels live on different grids")
    grid = f.grid
    total = constant(grid, 0.0)
    for x in range(grid.m):
        Fx = _slice_expansion(f, x)
        Gx = _slice_expansion(g, x)
        total = total + multiply(Fx, Gx).scale(grid.measures[x])
    return total.scale(p * q)


def _slice_expansion(f: Kernel, x: int) -> ChaosExpansion:
    sub = f.coeffs[x]
    if f.order == 1:
        return constant(f.grid, float(sub))
    return ChaosExpansion(f.grid, 0.0, {f.order - 1: Kernel(f.grid, sub, symmetric=True)})


@dataclass(frozen=True, eq=False)
class GaussianSample:
    """Normalized increments ``xi_i = dB_i / sqrt(measure_i)``, one per cell."""

    grid: Grid
    xi: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        xi = np.asarray(self.xi, dtype=np.float64)
        if xi.shape[-1] != self.grid.m:
            raise GridMismatchError(f"sample has {xi.shape[-1]} increments, grid has {self.grid.m} cells")
        object.__setattr__(self, "xi", xi)

    @property
    def increments(self) -> np.ndarray:
        return self.xi * np.sqrt(self.grid.measures)


def _wick_eval(coeffs: np.ndarray, batched: bool, dB: np.ndarray, mu: np.ndarray) -> np.ndarray:
    # I_q(f) = sum_u dB_u I_{q-1}(f(., u)) - (q - 1) I_{q-2}(sum_u mu_u f(., u, u))
    q = coeffs.ndim - (1 if batched else 0)
    if q == 0:
        return coeffs if batched else np.full(dB.shape[0], float(coeffs))
    if q == 1:
        return np.einsum("nu,nu->n", coeffs, dB) if batched else dB @ coeffs
    if batched:
        head = np.einsum("n...u,nu->n...", coeffs, dB)
    else:
        head = np.tensordot(dB, coeffs, axes=([1], [q - 1]))
    trace = np.einsum("...uu,u->...", coeffs, mu)
    return _wick_eval(head, True, dB, mu) - (q - 1) * _wick_eval(trace, batched, dB, mu)


def evaluate(F: ChaosExpansion, s: GaussianSample | np.ndarray) -> np.ndarray | float:
    """Realize ``F`` on Gaussian increments.

    ``s`` holds normalized increments, shape ``(m,)`` for one path or
    ``(N, m)`` for a batch.  Each order is evaluated by the multivariate Hermite
    recurrence, which for a kernel supported on a single cell multiset with
    multiplicities ``k_i`` reduces to ``prod_i mu_i**(k_i/2) He_{k_i}(xi_i)``
    times the number of tuples in the multiset (see :func:`evaluate_hermite`).
    """
    xi = s.xi if isinstance(s, GaussianSample) else np.asarray(s, dtype=np.float64)
    if isinstance(s, GaussianSample) and s.grid != F.grid:
        raise GridMismatchError("sample grid differs from expansion grid")
    single = xi.ndim == 1
    xi2 = np.atleast_2d(xi)
    if xi2.shape[1] != F.grid.m:
        raise GridMismatchError(f"sample has {xi2.shape[1]} increments, grid has {F.grid.m} cells")
    mu = F.grid.measures
    dB = xi2 * np.sqrt(mu)
    out = np.full(xi2.shape[0], F.constant)
    for f in F.terms.values():
        out = out + _wick_eval(f.coeffs, False, dB, mu)
    return float(out[0]) if single else out


def evaluate_hermite(F: ChaosExpansion, s: GaussianSample | np.ndarray) -> np.ndarray | float:
    """Reference evaluation grouping coefficients by cell multiset.

    Slow (enumerates every multiset); used to pin the normalization of
    :func:`evaluate`.
    """
    xi = s.xi if isinstance(s, GaussianSample) else np.asarray(s, dtype=np.float64)
    single = xi.ndim == 1
    xi2 = np.atleast_2d(xi)
    mu = F.grid.measures
    out = np.full(xi2.shape[0], F.constant)
    max_q = F.max_order
    if max_q:
        # herm[k][:, i] = mu_i^(k/2) He_k(xi_i)
        herm = []
        for k in range(max_q + 1):
            coef = np.zeros(k + 1)
            coef[k] = 1.0
            herm.append(hermite_e.hermeval(xi2, coef) * mu ** (k / 2.0))
    for q, f in F.terms.items():
        for cells in itertools.combinations_with_replacement(range(F.grid.m), q):
            weight = f.coeffs[cells]
            if weight == 0.0:
                continue
            counts = Counter(cells)
            multiplicity = math.factorial(q)
            for k in counts.values():
                multiplicity //= math.factorial(k)
            term = np.full(xi2.shape[0], weight * multiplicity)
            for cell, k in counts.items():
                term = term * herm[k][:, cell]
            out = out + term
    return float(out[0]) if single else out
