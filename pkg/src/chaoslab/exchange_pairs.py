"""Exchangeable pairs of Brownian motions realized on a grid.

Two constructions:

* Mehler interpolation ``B^t = e^{-t} B + sqrt(1 - e^{-2t}) B_hat``.  Kernels are
  pushed onto a doubled grid whose second half carries the independent copy;
  conditioning on ``B`` keeps only the first-half coordinates.
* Gibbs block resampling: one of ``n`` equal blocks, chosen uniformly, gets a
  fresh copy of its noise.

All conditional moments are exact finite computations in the discretized
Wiener space; only :func:`exchangeability_mc_test` samples.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _rng
from .chaos_algebra import (
    ChaosExpansion,
    evaluate,
    expectation_product,
    from_kernel,
    gradient_product,
    l2_distance,
    multiply,
    second_moment,
)
from .families import BlockMismatchError, blocks
from .grid_kernel import (
    CellMap,
    Grid,
    GridMismatchError,
    Kernel,
    check_budget,
    contract_arrays,
    push_forward,
    restrict_support,
    shuffle_symmetrize,
    symmetrize,
    tensor_budget,
)

DEFAULT_T_GRID = (1e-1, 1e-2, 1e-3)
MIN_EXCHANGEABILITY_N = 10_000


@dataclass(frozen=True)
class MehlerPair:
    """``(B, B^t)`` with ``B^t = e^{-t} B + sqrt(1 - e^{-2t}) B_hat``."""

    t: float
    base_grid: Grid

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError("interpolation time must be non-negative")

    @property
    def doubled_grid(self) -> Grid:
        return self.base_grid.double()

    @property
    def map(self) -> CellMap:
        m = self.base_grid.m
        mat = np.zeros((2 * m, m))
        idx = np.arange(m)
        mat[idx, idx] = math.exp(-self.t)
        mat[idx + m, idx] = math.sqrt(-math.expm1(-2.0 * self.t))
        return CellMap(self.base_grid, self.doubled_grid, mat)


@dataclass(frozen=True)
class GibbsPair:
    """Resample the noise on one of ``n`` contiguous blocks of the grid."""

    n: int
    base_grid: Grid

    def __post_init__(self) -> None:
        if self.n < 1 or self.base_grid.m % self.n:
            raise BlockMismatchError(f"n={self.n} does not divide m={self.base_grid.m}")

    @property
    def blocks(self) -> list[np.ndarray]:
        return blocks(self.base_grid.m, self.n)

    def swap_map(self, v: int) -> CellMap:
        """Cells of block ``v`` go to the second (fresh) half, the rest stay."""
        m = self.base_grid.m
        mat = np.zeros((2 * m, m))
        idx = np.arange(m)
        in_block = np.zeros(m, dtype=bool)
        in_block[self.blocks[v]] = True
        mat[np.where(in_block, idx + m, idx), idx] = 1.0
        return CellMap(self.base_grid, self.base_grid.double(), mat)


@dataclass(frozen=True)
class ShiftedPair:
    """Non-exchangeable control: ``B'`` is ``B`` plus a deterministic drift."""

    shift: float
    base_grid: Grid


def embed(F: ChaosExpansion) -> ChaosExpansion:
    """``F`` seen as a functional of the first half of the doubled grid."""
    m = F.grid.m
    mat = np.vstack([np.eye(m), np.zeros((m, m))])
    return _push(CellMap(F.grid, F.grid.double(), mat), F)


def _push(A: CellMap, F: ChaosExpansion) -> ChaosExpansion:
    if F.grid != A.source:
        raise GridMismatchError("expansion grid does not match the cell map's source grid")
    return ChaosExpansion(A.target, F.constant, {q: push_forward(A, f) for q, f in F.terms.items()})


def mehler_transport(F: ChaosExpansion, t: float) -> ChaosExpansion:
    """``F_t``: the same functional of ``B^t``, written over the doubled grid."""
    if t <= 0:
        raise ValueError("mehler_transport needs t > 0")
    return _push(MehlerPair(t, F.grid).map, F)


def condition_on_first_half(H: ChaosExpansion) -> ChaosExpansion:
    """``E[H | first-half noise]``: restrict every kernel to first-half cells."""
    if not H.grid.doubled:
        raise GridMismatchError("condition_on_first_half needs an expansion over a doubled grid")
    m = H.grid.half_size
    base = H.grid.base()
    first = (slice(0, m),)
    terms = {q: Kernel(base, f.coeffs[first * q], symmetric=True) for q, f in H.terms.items()}
    return ChaosExpansion(base, H.constant, terms)


def conditioned_product(H: ChaosExpansion, K: ChaosExpansion) -> ChaosExpansion:
    """``condition_on_first_half(multiply(H, K))`` without forming full doubled-grid products.

    Free arguments of each contraction are restricted to first-half cells before
    contracting; contracted arguments still run over the whole doubled grid.
    """
    if H.grid != K.grid or not H.grid.doubled:
        raise GridMismatchError("conditioned_product needs two expansions over the same doubled grid")
    mu = H.grid.measures
    m = H.grid.half_size
    base = H.grid.base()
    cH = condition_on_first_half(H)
    cK = condition_on_first_half(K)
    const = H.constant * K.constant
    acc: dict[int, np.ndarray] = {}

    def add(order: int, arr: np.ndarray) -> None:
        acc[order] = acc[order] + arr if order in acc else np.array(arr, copy=True)

    if H.constant:
        for q, g in cK.terms.items():
            add(q, H.constant * g.coeffs)
    if K.constant:
        for p, f in cH.terms.items():
            add(p, K.constant * f.coeffs)
    for p, f in H.terms.items():
        for q, g in K.terms.items():
            for r in range(min(p, q) + 1):
                n = p + q - 2 * r
                coef = math.factorial(r) * math.comb(p, r) * math.comb(q, r)
                a = f.coeffs[(slice(0, m),) * (p - r)]
                b = g.coeffs[(slice(0, m),) * (q - r)]
                if n == 0:
                    const += coef * float(np.sum(contract_arrays(a, b, r, mu)))
                    continue
                check_budget(m, n)
                add(n, coef * shuffle_symmetrize(contract_arrays(a, b, r, mu), p - r))
    terms = {n: Kernel(base, arr, symmetric=True) for n, arr in sorted(acc.items())}
    return ChaosExpansion(base, const, terms)


def _pure(f: Kernel, p: int) -> ChaosExpansion:
    if f.order != p:
        raise ValueError(f"kernel order {f.order} does not match p={p}")
    return from_kernel(p, f)


def _check_t(t: float) -> None:
    if t <= 0:
        raise ValueError("t must be positive")


def mehler_drift_check(f: Kernel, p: int, t: float) -> float:
    """``|| (1/t) E[F_t - F | B] + p F ||_{L^2}``, computed on the doubled grid.

    Equals ``|(e^{-pt} - 1)/t + p| sqrt(p!) ||f~||``.
    """
    _check_t(t)
    F = _pure(f, p)
    drift = (condition_on_first_half(mehler_transport(F, t)) - F).scale(1.0 / t)
    return l2_distance(drift, F.scale(-p))


def mehler_drift_closed_form(f: Kernel, p: int, t: float) -> float:
    F = _pure(f, p)
    return abs(math.expm1(-p * t) / t + p) * math.sqrt(second_moment(F))


def quadratic_target(f: Kernel, p: int) -> ChaosExpansion:
    """``2 p^2 int I_{p-1}(f(x,.))^2 dx = 2 sum_{r>=1} r r! C(p,r)^2 I_{2p-2r}(f (x)~_r f)``."""
    return gradient_product(f, p, f, p).scale(2.0)


def mehler_difference(F: ChaosExpansion, t: float) -> ChaosExpansion:
    """``D_t = F_t - F`` over the doubled grid."""
    return mehler_transport(F, t) - embed(F)


def mehler_quadratic_check(f: Kernel, p: int, t: float) -> float:
    """Distance from ``(1/t) E[(F_t - F)^2 | B]`` to ``2 p^2 int I_{p-1}(f(x,.))^2 dx``."""
    _check_t(t)
    F = _pure(f, p)
    D = mehler_difference(F, t)
    Q = conditioned_product(D, D).scale(1.0 / t)
    return l2_distance(Q, quadratic_target(f, p))


def mehler_fourth_moment(f: Kernel, p: int, t: float, method: str = "auto") -> float:
    """``E[(F_t - F)^4]`` exactly.

    ``method="doubled"`` squares ``D_t`` on the doubled grid (order ``2p`` on
    ``2m`` cells).  ``method="semigroup"`` uses
    ``E[D_t^4] = sum_k w_k (6 expm1(-k t) - 8 expm1(-p t))`` with
    ``w_k = k! ||(F^2)_k||^2``, which only needs ``F^2`` on the base grid and
    follows from ``E[F_t^a F^b] = E[P_t(F^a) F^b]`` and self-adjointness of
    ``P_t``.  ``"auto"`` picks the doubled route when it fits the budget.
    """
    _check_t(t)
    F = _pure(f, p)
    if method == "auto":
        method = "doubled" if (2 * F.grid.m) ** (2 * p) <= tensor_budget() else "semigroup"
    if method == "doubled":
        D = mehler_difference(F, t)
        return second_moment(multiply(D, D))
    if method == "semigroup":
        sq = multiply(F, F)
        # k = 0 term: w_0 = (E F^2)^2, and expm1(0) = 0
        pieces = [sq.constant**2 * (-8.0 * math.expm1(-p * t))]
        for k, g in sq.terms.items():
            w = math.factorial(k) * float(np.sum(_weighted_sq(g)))
            pieces.append(w * (6.0 * math.expm1(-k * t) - 8.0 * math.expm1(-p * t)))
        return max(math.fsum(pieces), 0.0)
    raise ValueError(f"unknown method {method!r}")


def _weighted_sq(g: Kernel) -> np.ndarray:
    w = g.coeffs**2
    mu = g.grid.measures
    for ax in range(g.order):
        shape = [1] * g.order
        shape[ax] = mu.size
        w = w * mu.reshape(shape)
    return w


def mehler_fourth_check(f: Kernel, p: int, t: float, method: str = "auto") -> float:
    """``(1/t) E[(F_t - F)^4]``; tends to 0 linearly in ``t``."""
    return mehler_fourth_moment(f, p, t, method) / t


def mehler_second_moment(f: Kernel, p: int, t: float) -> float:
    """``E[(F_t - F)^2] = 2 sigma^2 (1 - e^{-pt})``, from the doubled grid."""
    _check_t(t)
    return second_moment(mehler_difference(_pure(f, p), t))


def pair_covariance(F: ChaosExpansion, t: float) -> float:
    """``E[F_t F]`` from doubled-grid second moments."""
    return expectation_product(mehler_transport(F, t), embed(F))


def third_moment_surrogate(f: Kernel, p: int, t: float) -> float:
    """``sqrt((1/t) E[D^2] (1/t) E[D^4] t)``, the Cauchy-Schwarz majorant of ``(1/t) E|D_t|^3``."""
    second = mehler_second_moment(f, p, t) / t
    fourth = mehler_fourth_check(f, p, t)
    return math.sqrt(second * fourth * t)


def _pure_order(F: ChaosExpansion) -> tuple[int, Kernel]:
    if F.constant != 0.0 or len(F.terms) != 1:
        raise ValueError("expected a pure chaos element (single order, zero mean)")
    (p, f), = F.terms.items()
    return p, f


def gibbs_drift(F: ChaosExpansion, n: int) -> tuple[ChaosExpansion, float]:
    """``n E[F^(n) - F | W]`` and its L^2 distance to ``-p F``.

    ``E[F^(n) | W, block v resampled] = I_p(f restricted to cells outside block v)``.
    """
    p, f = _pure_order(F)
    pair = GibbsPair(n, F.grid)
    all_cells = np.arange(F.grid.m)
    ones = Kernel(F.grid, np.ones_like(f.coeffs), symmetric=True)
    # avoided[i] = number of blocks that no coordinate of the tuple i falls in
    avoided = np.zeros_like(f.coeffs)
    for blk in pair.blocks:
        avoided += restrict_support(ones, np.setdiff1d(all_cells, blk)).coeffs
    drift = ChaosExpansion(F.grid, 0.0, {p: Kernel(F.grid, f.coeffs * (avoided - n), symmetric=True)})
    return drift, l2_distance(drift, F.scale(-p))


def gibbs_residual_norm(f: Kernel, p: int, n: int) -> float:
    """Direct norm of the Gibbs residual: the kernel is ``f * (p - #blocks hit)``."""
    f = symmetrize(f)
    m = f.grid.m
    block_of = np.repeat(np.arange(n), m // n) if m % n == 0 else None
    if block_of is None:
        raise BlockMismatchError(f"n={n} does not divide m={m}")
    grids = np.meshgrid(*([block_of] * p), indexing="ij")
    stacked = np.stack(grids, axis=0)
    hit = np.zeros(stacked.shape[1:], dtype=np.int64)
    for b in range(n):
        hit += np.any(stacked == b, axis=0)
    resid = Kernel(f.grid, f.coeffs * (p - hit))
    return math.sqrt(math.factorial(p) * float(np.sum(_weighted_sq(resid))))


def gibbs_quadratic_check(f: Kernel, p: int, n: int) -> float:
    """Distance from ``n E[(F^(n) - F)^2 | W]`` to ``2 p^2 int I_{p-1}(f(x,.))^2 dx``."""
    F = _pure(f, p)
    pair = GibbsPair(n, F.grid)
    base = embed(F)
    Q = ChaosExpansion(F.grid, 0.0, {})
    for v in range(n):
        D = _push(pair.swap_map(v), F) - base
        Q = Q + conditioned_product(D, D)
    return l2_distance(Q, quadratic_target(f, p))


@dataclass
class DiagnosticsReport:
    """Rows of (construction, parameter, distance, target_norm, rate_estimate)."""

    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    COLUMNS = ("construction", "parameter", "distance", "target_norm", "rate_estimate", "ratio_to_rate")

    def add(self, construction: str, parameter: float, distance: float, target_norm: float,
            ratio_to_rate: float | None = None) -> None:
        if distance < 0:
            raise ValueError("distances are non-negative")
        self.rows.append({
            "construction": construction,
            "parameter": float(parameter),
            "distance": float(distance),
            "target_norm": float(target_norm),
            "rate_estimate": None,
            "ratio_to_rate": ratio_to_rate,
        })

    def finalize(self) -> "DiagnosticsReport":
        """Fill ``rate_estimate`` with the local log-log slope against the previous row."""
        last: dict[str, dict] = {}
        for row in self.rows:
            prev = last.get(row["construction"])
            if prev is not None and prev["distance"] > 0 and row["distance"] > 0:
                row["rate_estimate"] = math.log(row["distance"] / prev["distance"]) / math.log(
                    row["parameter"] / prev["parameter"]
                )
            last[row["construction"]] = row
        return self

    def slope(self, construction: str) -> float:
        rows = [r for r in self.rows if r["construction"] == construction]
        return loglog_slope([r["parameter"] for r in rows], [r["distance"] for r in rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for row in self.rows:
            writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in self.COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"meta": self.meta, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def mehler_rate_table(f: Kernel, p: int, t_grid: Sequence[float] = DEFAULT_T_GRID) -> DiagnosticsReport:
    """Drift, quadratic and fourth-moment checks over a grid of ``t``."""
    F = _pure(f, p)
    norm_F = math.sqrt(second_moment(F))
    target = quadratic_target(f, p)
    target_norm = math.sqrt(second_moment(target))
    report = DiagnosticsReport(meta={"p": p, "m": f.grid.m, "t_grid": list(t_grid)})
    for t in t_grid:
        report.add("mehler-drift", t, mehler_drift_check(f, p, t), p * norm_F,
                   mehler_drift_check(f, p, t) / t)
        quad = mehler_quadratic_check(f, p, t)
        report.add("mehler-quadratic", t, quad, target_norm, quad / t)
        fourth = mehler_fourth_check(f, p, t)
        report.add("mehler-fourth", t, fourth, 0.0, fourth / t)
    return report.finalize()


def gibbs_rate_table(f: Kernel, p: int, n_grid: Sequence[int], quadratic: bool = True) -> DiagnosticsReport:
    """Gibbs drift (and optionally second-moment) distances over a grid of ``n``."""
    F = _pure(f, p)
    norm_F = math.sqrt(second_moment(F))
    target_norm = math.sqrt(second_moment(quadratic_target(f, p)))
    report = DiagnosticsReport(meta={"p": p, "m": f.grid.m, "n_grid": list(n_grid)})
    for n in n_grid:
        _, dist = gibbs_drift(F, n)
        report.add("gibbs-drift", n, dist, p * norm_F)
        if quadratic:
            report.add("gibbs-quadratic", n, gibbs_quadratic_check(f, p, n), target_norm)
    return report.finalize()


PHI_BATTERY = {
    "xy^2": lambda x, y: x * y * y,
    "x^2y": lambda x, y: x * x * y,
    "x^3y": lambda x, y: x**3 * y,
    "min(x,y)x": lambda x, y: np.minimum(x, y) * x,
}


@dataclass
class ExchangeabilityReport:
    construction: str
    N: int
    seed: int
    rows: list[dict]
    passed: bool

    def to_dict(self) -> dict:
        return {"construction": self.construction, "N": self.N, "seed": self.seed,
                "passed": self.passed, "rows": self.rows}


def _pair_draws(pair, rng: np.random.Generator, rows: int) -> tuple[np.ndarray, np.ndarray]:
    m = pair.base_grid.m
    xi = rng.standard_normal((rows, m))
    if isinstance(pair, MehlerPair):
        fresh = rng.standard_normal((rows, m))
        a = math.exp(-pair.t)
        b = math.sqrt(-math.expm1(-2.0 * pair.t))
        return xi, a * xi + b * fresh
    if isinstance(pair, GibbsPair):
        fresh = rng.standard_normal((rows, m))
        v = rng.integers(0, pair.n, size=rows)
        block_of = np.repeat(np.arange(pair.n), m // pair.n)
        mask = block_of[None, :] == v[:, None]
        return xi, np.where(mask, fresh, xi)
    if isinstance(pair, ShiftedPair):
        return xi, xi + pair.shift
    raise TypeError(f"unsupported pair {type(pair).__name__}")


def exchangeability_mc_test(pair, F: ChaosExpansion, N: int, seed: int = 0,
                            workers: int = 1, z_max: float = 4.0) -> ExchangeabilityReport:
    """Compare ``E[phi(F, F')]`` with ``E[phi(F', F)]`` over a fixed battery.

    PASS when every discrepancy is within ``z_max`` standard errors.
    """
    if N < MIN_EXCHANGEABILITY_N:
        raise ValueError(f"N={N} is underpowered; need at least {MIN_EXCHANGEABILITY_N}")
    if F.grid != pair.base_grid:
        raise GridMismatchError("expansion grid differs from the pair's grid")

    def block(rng: np.random.Generator, b: int, rows: int) -> np.ndarray:
        xi, xi2 = _pair_draws(pair, rng, rows)
        x, y = evaluate(F, xi), evaluate(F, xi2)
        out = np.empty((len(PHI_BATTERY), 2))
        for k, phi in enumerate(PHI_BATTERY.values()):
            diff = phi(x, y) - phi(y, x)
            out[k] = diff.sum(), (diff * diff).sum()
        return out

    parts = _rng.map_blocks(block, seed, N, workers=workers)
    totals = np.zeros((len(PHI_BATTERY), 2))
    for part in parts:
        totals += part
    rows = []
    passed = True
    for k, name in enumerate(PHI_BATTERY):
        mean_d = totals[k, 0] / N
        var_d = max(totals[k, 1] / N - mean_d**2, 0.0)
        se = math.sqrt(var_d / N)
        ok = abs(mean_d) <= z_max * se
        passed = passed and ok
        rows.append({"phi": name, "discrepancy": mean_d, "stderr": se,
                     "z": abs(mean_d) / se if se > 0 else 0.0, "pass": ok})
    return ExchangeabilityReport(type(pair).__name__, N, seed, rows, passed)
