"""Seeded Monte Carlo sampling of chaos functionals and empirical distances.

Estimators compare a sample with the centered Gaussian law of the same
(co)variance: binned total variation, the exact empirical 1-d Wasserstein
distance, a Kolmogorov statistic, and mean discrepancies of a small battery of
polynomial test functions with analytic Gaussian means.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import _rng
from .chaos_algebra import ChaosExpansion, evaluate
from .grid_kernel import BudgetExceededError
from .stein_bounds import ChaosVector

DEFAULT_MAX_DRAWS = 2**32
DEFAULT_BINS = 200
DEFAULT_RANGE_MULT = 6.0
DEFAULT_CLIP_MULT = 4.0


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """``values`` has shape ``(N,)`` for a scalar functional, ``(N, d)`` for a vector."""

    values: np.ndarray
    seed: int
    generator: str = _rng.GENERATOR_ID

    @property
    def N(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return 1 if self.values.ndim == 1 else int(self.values.shape[1])


@dataclass
class DistanceEstimate:
    name: str
    value: float
    stderr: float | None
    N: int
    seed: int | None = None
    params: dict = field(default_factory=dict)
    note: str = ""

    def __post_init__(self) -> None:
        if not self.value >= 0:
            raise ValueError(f"distance estimate must be non-negative, got {self.value}")

    def to_dict(self) -> dict:
        return {"estimator": self.name, "value": self.value, "stderr": self.stderr, "N": self.N,
                "seed": self.seed, "params": self.params, "note": self.note}


CSV_COLUMNS = ("estimator", "value", "stderr", "N", "seed", "params")


def estimates_to_csv(estimates: list[DistanceEstimate]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for e in estimates:
        writer.writerow([e.name, repr(float(e.value)), "" if e.stderr is None else repr(float(e.stderr)),
                         e.N, "" if e.seed is None else e.seed, json.dumps(e.params, sort_keys=True)])
    return buf.getvalue()


def estimates_to_json(estimates: list[DistanceEstimate]) -> str:
    return json.dumps([e.to_dict() for e in estimates], indent=2, sort_keys=True)


def _check_draws(N: int, m: int, max_draws: int | None) -> None:
    if N < 1:
        raise ValueError("N must be at least 1")
    cap = DEFAULT_MAX_DRAWS if max_draws is None else max_draws
    if N * m > cap:
        raise BudgetExceededError(f"{N} samples x {m} cells exceeds the draw budget {cap}")


def sample(F: ChaosExpansion, N: int, seed: int = 0, workers: int = 1,
           max_draws: int | None = None) -> SampleBatch:
    """``N`` i.i.d. evaluations of ``F``; identical for any ``workers``."""
    m = F.grid.m
    _check_draws(N, m, max_draws)

    def block(rng: np.random.Generator, b: int, rows: int) -> np.ndarray:
        return evaluate(F, rng.standard_normal((rows, m)))

    return SampleBatch(np.concatenate(_rng.map_blocks(block, seed, N, workers=workers)), seed)


def sample_vector(v: ChaosVector, N: int, seed: int = 0, workers: int = 1,
                  max_draws: int | None = None) -> SampleBatch:
    """Joint samples of every component driven by the same noise; shape ``(N, d)``."""
    m = v.grid.m
    _check_draws(N, m, max_draws)
    comps = v.expansions()

    def block(rng: np.random.Generator, b: int, rows: int) -> np.ndarray:
        xi = rng.standard_normal((rows, m))
        return np.column_stack([evaluate(F, xi) for F in comps])

    return SampleBatch(np.concatenate(_rng.map_blocks(block, seed, N, workers=workers)), seed)


def sample_gaussian(sigma: np.ndarray, N: int, seed: int = 0, workers: int = 1) -> SampleBatch:
    """Draws from ``N(0, Sigma)`` through the same block-keyed streams."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    d = sigma.shape[0]
    vals, vecs = np.linalg.eigh(sigma)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))

    def block(rng: np.random.Generator, b: int, rows: int) -> np.ndarray:
        return rng.standard_normal((rows, d)) @ root.T

    out = np.concatenate(_rng.map_blocks(block, seed, N, workers=workers))
    return SampleBatch(out[:, 0] if d == 1 else out, seed)


def _scalar_values(batch: SampleBatch) -> np.ndarray:
    if batch.values.ndim != 1:
        raise ValueError("estimator needs a scalar batch")
    if batch.N == 0:
        raise ValueError("empty batch")
    return batch.values


def _check_sigma2(sigma2: float) -> float:
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return math.sqrt(sigma2)


def tv_binned(batch: SampleBatch, sigma2: float, bins: int = DEFAULT_BINS,
              range_mult: float = DEFAULT_RANGE_MULT) -> DistanceEstimate:
    """``1/2 sum |empirical mass - N(0, sigma2) mass|`` over ``bins`` equal bins plus two tails.

    The binned distance never exceeds the true total variation, so it is
    biased low by the within-bin discrepancy; the standard error is the
    delta-method one for the multinomial bin counts.
    """
    if bins < 10:
        raise ValueError("tv_binned needs at least 10 bins")
    x = _scalar_values(batch)
    sigma = _check_sigma2(sigma2)
    edges = np.linspace(-range_mult * sigma, range_mult * sigma, bins + 1)
    inner_counts, _ = np.histogram(x, bins=edges)
    counts = np.concatenate([[np.sum(x < edges[0])], inner_counts, [np.sum(x > edges[-1])]])
    emp = counts / x.size
    cdf = ndtr(edges / sigma)
    gauss = np.concatenate([[cdf[0]], np.diff(cdf), [1.0 - cdf[-1]]])
    diff = emp - gauss
    value = 0.5 * float(np.sum(np.abs(diff)))
    s = 0.5 * np.sign(diff)
    var = float(np.sum(s * s * emp) - np.sum(s * emp) ** 2) / x.size
    return DistanceEstimate(
        "tv_binned", value, math.sqrt(max(var, 0.0)), x.size, batch.seed,
        {"bins": bins, "range_mult": range_mult, "bin_width": float(edges[1] - edges[0]), "sigma2": sigma2},
        "binned TV lower-bounds the true TV up to binning error; normal CDF from scipy.special.ndtr",
    )


def _G(x: np.ndarray, sigma: float) -> np.ndarray:
    # antiderivative of Phi(x / sigma), vanishing at -inf
    z = x / sigma
    return x * ndtr(z) + sigma * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def w1_empirical(batch: SampleBatch, sigma2: float) -> DistanceEstimate:
    """``int |F_emp(x) - Phi(x / sigma)| dx`` computed exactly from the sorted sample."""
    x = np.sort(_scalar_values(batch))
    sigma = _check_sigma2(sigma2)
    N = x.size
    Gx = _G(x, sigma)
    total = [float(Gx[0]), float(Gx[-1] - x[-1])]
    if N > 1:
        a, b = x[:-1], x[1:]
        level = np.arange(1, N) / N
        c = np.clip(sigma * ndtri(level), a, b)
        Gc = _G(c, sigma)
        left = level * (c - a) - (Gc - Gx[:-1])
        right = (Gx[1:] - Gc) - level * (b - c)
        total.append(float(np.sum(left + right)))
    value = max(math.fsum(total), 0.0)
    return DistanceEstimate("w1", value, None, N, batch.seed, {"sigma2": sigma2},
                            "exact integral of |F_emp - Phi_sigma|; no closed-form standard error")


def ks_statistic(batch: SampleBatch, sigma2: float) -> DistanceEstimate:
    """``sup |F_emp - Phi_sigma|``."""
    x = np.sort(_scalar_values(batch))
    sigma = _check_sigma2(sigma2)
    N = x.size
    cdf = ndtr(x / sigma)
    value = float(max(np.max(np.arange(1, N + 1) / N - cdf), np.max(cdf - np.arange(N) / N), 0.0))
    return DistanceEstimate("ks", value, None, N, batch.seed, {"sigma2": sigma2})


_G_ID = re.compile(r"^x(\d+)(?:\^(\d))?(?:x(\d+))?$")


@dataclass(frozen=True)
class TestFunction:
    """Monomial ``prod_k x_k^{e_k}`` of degree 2 or 3 (indices are 0-based here)."""

    gid: str
    exponents: tuple[tuple[int, int], ...]

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.exponents)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.ones(x.shape[0])
        for i, e in self.exponents:
            out = out * x[:, i] ** e
        return out

    def gaussian_mean(self, sigma: np.ndarray) -> float:
        """Wick's formula: odd degree gives 0, ``E x_i x_j = Sigma_ij``."""
        if self.degree % 2:
            return 0.0
        idx = [i for i, e in self.exponents for _ in range(e)]
        return float(sigma[idx[0], idx[1]])

    def hessian_bound(self, radius: float) -> float:
        """``sup ||Hess g||_op`` over the box ``|x_k| <= radius``.

        ``x_i x_j``: 1 (2 if ``i = j``); ``x_i^2 x_j``: ``(1 + sqrt 5) radius``;
        ``x_i^3``: ``6 radius``.
        """
        exps = dict(self.exponents)
        if self.degree == 2:
            return 2.0 if len(exps) == 1 else 1.0
        if len(exps) == 1:
            return 6.0 * radius
        return (1.0 + math.sqrt(5.0)) * radius


def parse_test_function(gid: str, d: int | None = None) -> TestFunction:
    """Ids ``x{i}x{j}``, ``x{i}^2x{j}``, ``x{i}^3`` with 1-based indices."""
    match = _G_ID.match(gid)
    if not match:
        raise ValueError(f"unknown test function {gid!r}")
    i, power, j = match.groups()
    i = int(i) - 1
    power = int(power) if power else 1
    counts: dict[int, int] = {i: power}
    if j is not None:
        counts[int(j) - 1] = counts.get(int(j) - 1, 0) + 1
    degree = sum(counts.values())
    if degree not in (2, 3) or (power == 3 and j is not None) or (power == 1 and j is None):
        raise ValueError(f"unknown test function {gid!r}")
    if min(counts) < 0 or (d is not None and max(counts) >= d):
        raise ValueError(f"test function {gid!r} does not fit dimension {d}")
    return TestFunction(gid, tuple(sorted(counts.items())))


def battery(d: int) -> list[str]:
    """Every ``x_i x_j`` (``i <= j``), ``x_i^2 x_j`` (``i != j``) and ``x_i^3``."""
    ids = []
    for i in range(1, d + 1):
        for j in range(i, d + 1):
            ids.append(f"x{i}x{j}")
    for i in range(1, d + 1):
        for j in range(1, d + 1):
            if i != j:
                ids.append(f"x{i}^2x{j}")
    ids.extend(f"x{i}^3" for i in range(1, d + 1))
    return ids


def clip_radius(sigma: np.ndarray, clip_mult: float = DEFAULT_CLIP_MULT) -> float:
    return clip_mult * math.sqrt(float(np.max(np.diag(np.atleast_2d(sigma)))))


def smooth_discrepancy(batch_d: SampleBatch, Sigma: np.ndarray, g_id: str,
                       clip_mult: float = DEFAULT_CLIP_MULT) -> DistanceEstimate:
    """``|mean g(F) - E g(N)|`` with its standard error; ``M2`` is reported for the clipped box."""
    sigma = np.atleast_2d(np.asarray(Sigma, dtype=np.float64))
    if not np.allclose(sigma, sigma.T) or np.linalg.eigvalsh(sigma).min() <= 0:
        raise ValueError("Sigma must be symmetric positive definite")
    x = batch_d.values.reshape(batch_d.N, -1)
    if x.shape[1] != sigma.shape[0]:
        raise ValueError("batch dimension does not match Sigma")
    g = parse_test_function(g_id, x.shape[1])
    vals = g(x)
    target = g.gaussian_mean(sigma)
    radius = clip_radius(sigma, clip_mult)
    return DistanceEstimate(
        f"smooth:{g_id}", abs(float(np.mean(vals)) - target), float(np.std(vals) / math.sqrt(x.shape[0])),
        x.shape[0], batch_d.seed,
        {"gaussian_mean": target, "M2": g.hessian_bound(radius), "clip_radius": radius},
        "M2 is the Hessian operator-norm bound on the clipped box |x_k| <= clip_radius",
    )


def gaussian_norm4_mc(sigma: np.ndarray, N: int, seed: int = 0) -> tuple[float, float]:
    """MC estimate of ``E||N||^4`` and its standard error."""
    z = sample_gaussian(sigma, N, seed).values.reshape(N, -1)
    r4 = np.sum(z * z, axis=1) ** 2
    return float(np.mean(r4)), float(np.std(r4) / math.sqrt(N))
