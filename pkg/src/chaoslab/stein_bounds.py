"""Closed-form normal-approximation bounds for chaos elements and chaos vectors.

Everything here is computed from contraction norms, never from sampling:

* the fourth-moment discrepancy ``kappa = E[F^4] - 3 sigma^4`` and the total
  variation bound ``(2/sigma^2) sqrt((p-1)/(3p)) sqrt(kappa)``;
* the sharper intermediate bound ``(2/sigma^2) sqrt(Var(p int I_{p-1}^2))``;
* for vectors, the covariance ``Sigma``, the matrix ``V_ij`` of variances of
  ``p_i p_j int I_{p_i-1}(f_i) I_{p_j-1}(f_j) dx``, and the smooth-function,
  Wasserstein and fourth-moment (``E||F||^4 - E||N||^4``) bounds.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .chaos_algebra import (
    ChaosExpansion,
    constant,
    expectation_product,
    from_kernel,
    gradient_product,
    multiply,
    second_moment,
    sym_contraction_norm2,
    variance,
)
from .grid_kernel import Grid, GridMismatchError, Kernel, inner, symmetrize

SINGULAR_RTOL = 1e-12
RADICAND_ATOL = 1e-10


class ZeroVarianceError(ValueError):
    """The chaos element is degenerate (``sigma^2 == 0``)."""


class SingularCovarianceError(ValueError):
    """Covariance matrix is not positive definite."""


@dataclass(frozen=True, eq=False)
class ChaosVector:
    """Components ``(p_k, f_k)`` over a shared grid, sorted by order."""

    components: tuple[tuple[int, Kernel], ...]

    def __init__(self, components: Sequence[tuple[int, Kernel]]):
        comps = []
        for p, f in components:
            if f.order != p:
                raise ValueError(f"component kernel order {f.order} does not match p={p}")
            comps.append((int(p), symmetrize(f)))
        if not comps:
            raise ValueError("a chaos vector needs at least one component")
        grid = comps[0][1].grid
        if any(f.grid != grid for _, f in comps):
            raise GridMismatchError("chaos vector components must share a grid")
        comps.sort(key=lambda c: c[0])
        object.__setattr__(self, "components", tuple(comps))

    @property
    def d(self) -> int:
        return len(self.components)

    @property
    def grid(self) -> Grid:
        return self.components[0][1].grid

    @property
    def orders(self) -> list[int]:
        return [p for p, _ in self.components]

    def expansions(self) -> list[ChaosExpansion]:
        return [from_kernel(p, f) for p, f in self.components]

    def to_dict(self) -> dict:
        return {"components": [{"order": p, "kernel": f.to_dict()} for p, f in self.components]}

    @classmethod
    def from_dict(cls, data: dict) -> "ChaosVector":
        comps = []
        for item in data["components"]:
            kern = Kernel.from_dict(item["kernel"])
            comps.append((int(item.get("order", kern.order)), kern))
        return cls(comps)


def inputs_hash(*objs: Any) -> str:
    """Short SHA-256 digest of kernels, vectors, arrays and scalars."""
    h = hashlib.sha256()
    for obj in objs:
        if isinstance(obj, Kernel):
            h.update(obj.grid.measures.tobytes())
            h.update(obj.coeffs.tobytes())
        elif isinstance(obj, ChaosVector):
            for p, f in obj.components:
                h.update(str(p).encode())
                h.update(f.grid.measures.tobytes())
                h.update(f.coeffs.tobytes())
        elif isinstance(obj, np.ndarray):
            h.update(np.ascontiguousarray(obj, dtype=np.float64).tobytes())
        else:
            h.update(repr(obj).encode())
    return h.hexdigest()[:16]


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class BoundReport:
    """A computed bound with the ingredients it was built from."""

    name: str
    value: float
    ingredients: dict = field(default_factory=dict)
    inputs_hash: str = ""
    notes: list[str] = field(default_factory=list)
    vacuous: bool = False

    def __post_init__(self) -> None:
        if not self.value >= 0:
            raise ValueError(f"bound {self.name} must be non-negative, got {self.value}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "vacuous": self.vacuous,
            "inputs_hash": self.inputs_hash,
            "ingredients": _jsonable(self.ingredients),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[list[str]]:
        rows = [[self.name, "value", repr(self.value)]]
        for key, val in self.ingredients.items():
            rows.append([self.name, key, json.dumps(_jsonable(val))])
        return rows


def reports_to_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bound", "field", "value"])
    for rep in reports:
        writer.writerows(rep.csv_rows())
    return buf.getvalue()


def _prepare(f: Kernel, p: int) -> Kernel:
    if f.order != p:
        raise ValueError(f"kernel order {f.order} does not match p={p}")
    return symmetrize(f)


def contraction_weights(f: Kernel, p: int) -> dict[int, float]:
    """``w_r = r!^2 C(p,r)^4 (2p-2r)! ||f (x)~_r f||^2`` for ``1 <= r <= p-1``."""
    f = _prepare(f, p)
    return {
        r: math.factorial(r) ** 2 * math.comb(p, r) ** 4 * math.factorial(2 * p - 2 * r)
        * sym_contraction_norm2(f, r)
        for r in range(1, p)
    }


def pure_variance(f: Kernel, p: int) -> float:
    f = _prepare(f, p)
    return math.factorial(p) * inner(f, f)


def kappa(f: Kernel, p: int) -> float:
    """Fourth-moment discrepancy ``E[F^4] - 3 sigma^4`` of ``F = I_p(f)``.

    Computed as ``3 sum_r (r/p) w_r`` so it is a sum of non-negative terms and
    does not suffer from the cancellation in ``E[F^4] - 3 sigma^4``.
    """
    return 3.0 * sum((r / p) * w for r, w in contraction_weights(f, p).items())


def _sigma2(f: Kernel, p: int) -> float:
    s2 = pure_variance(f, p)
    if s2 <= 0.0:
        raise ZeroVarianceError("kernel has zero variance")
    return s2


def tv_bound(f: Kernel, p: int) -> float:
    """``(2/sigma^2) sqrt((p-1)/(3p)) sqrt(kappa)``; zero for ``p == 1``."""
    s2 = _sigma2(f, p)
    return 2.0 / s2 * math.sqrt((p - 1) / (3.0 * p)) * math.sqrt(kappa(f, p))


def s_variance(f: Kernel, p: int) -> float:
    """``Var(p int I_{p-1}(f(x,.))^2 dx) = sum_r (r/p)^2 w_r``."""
    return sum((r / p) ** 2 * w for r, w in contraction_weights(f, p).items())


def kappa_via_gradient(f: Kernel, p: int) -> float:
    """``3 E[F^2 (p int I_{p-1}(f(x,.))^2 dx - sigma^2)]`` from products of expansions.

    Independent of the contraction-weight route used by :func:`kappa`.
    """
    f = _prepare(f, p)
    F = from_kernel(p, f)
    G = gradient_product(f, p, f, p).scale(1.0 / p)
    G = G - constant(f.grid, pure_variance(f, p))
    # G has no chaos above order 2p - 2, so higher orders of F^2 do not contribute
    return 3.0 * expectation_product(multiply(F, F, max_order=2 * p - 2), G)


def intermediate_bound(f: Kernel, p: int) -> float:
    """``(2/sigma^2) sqrt(Var(p int I_{p-1}(f(x,.))^2 dx))``.

    This majorizes ``(2/sigma^2) E|p int I_{p-1}^2 dx - sigma^2|`` by
    Cauchy-Schwarz and never exceeds :func:`tv_bound`.
    """
    s2 = _sigma2(f, p)
    return 2.0 / s2 * math.sqrt(s_variance(f, p))


def tv_report(f: Kernel, p: int) -> list[BoundReport]:
    """Total variation bounds for ``I_p(f)`` with their ingredients."""
    f = _prepare(f, p)
    s2 = _sigma2(f, p)
    w = contraction_weights(f, p)
    k = kappa(f, p)
    norms = {str(r): sym_contraction_norm2(f, r) for r in range(1, p)}
    common = {"p": p, "sigma2": s2, "kappa": k, "contraction_norms2": norms}
    digest = inputs_hash(f)
    tv = tv_bound(f, p)
    mid = intermediate_bound(f, p)
    return [
        BoundReport("tv_fourth_moment", tv, dict(common), digest, vacuous=tv > 1.0),
        BoundReport(
            "tv_intermediate",
            mid,
            dict(common, s_variance=s_variance(f, p), weights={str(r): v for r, v in w.items()}),
            digest,
            notes=["E|S| majorized by sqrt(Var S)"],
            vacuous=mid > 1.0,
        ),
    ]


def covariance(v: ChaosVector) -> np.ndarray:
    """``sigma_ij = 1{p_i = p_j} p_i! <f_i, f_j>``."""
    d = v.d
    sigma = np.zeros((d, d))
    for i, (pi, fi) in enumerate(v.components):
        for j in range(i, d):
            pj, fj = v.components[j]
            if pi == pj:
                sigma[i, j] = sigma[j, i] = math.factorial(pi) * inner(fi, fj)
    return sigma


def gradient_matrix(v: ChaosVector) -> list[list[ChaosExpansion]]:
    """Expansions of ``p_i p_j int I_{p_i-1}(f_i(x,.)) I_{p_j-1}(f_j(x,.)) dx``."""
    comps = v.components
    return [[gradient_product(fi, pi, fj, pj) for pj, fj in comps] for pi, fi in comps]


def s_variance_matrix(v: ChaosVector) -> np.ndarray:
    """``V_ij`` = variance of the gradient-product expansion for components ``i, j``."""
    grads = gradient_matrix(v)
    return np.array([[variance(g) for g in row] for row in grads])


_TINY = np.finfo(np.float64).eps ** 2


def sym_eig(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as ``(A + A^T)/2``.  Sweeps stop once the
    off-diagonal Frobenius norm is at most ``tol * ||A||_F``.  Eigenvalues are
    returned in descending order with matching eigenvector columns.
    """
    a = np.array(A, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("sym_eig expects a square matrix")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    vecs = np.eye(n)
    scale = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = math.sqrt(max(np.sum(a**2) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * scale or scale == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= _TINY * scale:
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ rot
                a[idx, :] = rot.T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                vecs[:, idx] = vecs[:, idx] @ rot
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def _spd_norms(sigma: np.ndarray) -> dict[str, float]:
    vals, _ = sym_eig(sigma)
    lam_max, lam_min = float(vals[0]), float(vals[-1])
    if lam_min <= SINGULAR_RTOL * max(lam_max, 0.0) or lam_max <= 0.0:
        raise SingularCovarianceError(
            f"covariance is not positive definite (eigenvalues {vals.tolist()})"
        )
    return {
        "sigma_op": lam_max,
        "sigma_inv_op": 1.0 / lam_min,
        "sigma_inv_sqrt_op": lam_min**-0.5,
        "eigenvalues": vals.tolist(),
    }


def wasserstein_bound(v: ChaosVector) -> BoundReport:
    """``d_W(F, N) <= 2 ||Sigma^{-1/2}||_op / (p_1 sqrt(2 pi)) * sqrt(sum_ij V_ij)``."""
    sigma = covariance(v)
    norms = _spd_norms(sigma)
    V = s_variance_matrix(v)
    p1 = v.orders[0]
    total = float(np.sum(V))
    value = 2.0 * norms["sigma_inv_sqrt_op"] / (p1 * math.sqrt(2.0 * math.pi)) * math.sqrt(total)
    return BoundReport(
        "wasserstein_exchangeable",
        value,
        {"Sigma": sigma, "V": V, "V_sum": total, "p1": p1, **norms},
        inputs_hash(v),
        notes=["denominator uses the smallest chaos order p_1 (printed as q_1 in the source statement)"],
    )


def smooth_bound(v: ChaosVector, M2: float) -> float:
    """``|E g(F) - E g(N)| <= sqrt(d) M2 / (2 p_1) * sqrt(sum_ij V_ij)`` for ``sup ||D^2 g||_op <= M2``."""
    if M2 < 0:
        raise ValueError("M2 must be non-negative")
    V = s_variance_matrix(v)
    return math.sqrt(v.d) * M2 / (2.0 * v.orders[0]) * math.sqrt(float(np.sum(V)))


def gaussian_fourth_norm_moment(sigma: np.ndarray) -> float:
    """``E||N||^4 = (tr Sigma)^2 + 2 tr(Sigma^2)`` for ``N ~ N(0, Sigma)``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return float(np.trace(sigma) ** 2 + 2.0 * np.trace(sigma @ sigma))


def fourth_norm_moment(v: ChaosVector) -> float:
    """``E||F||^4`` computed exactly from the expansion of ``sum_k F_k^2``."""
    grid = v.grid
    sq = ChaosExpansion(grid, 0.0, {})
    for F in v.expansions():
        sq = sq + multiply(F, F)
    return second_moment(sq)


def nprr_bound(v: ChaosVector) -> BoundReport:
    """``d_W(F, N) <= sqrt(d) ||Sigma||^{1/2} ||Sigma^{-1}|| sqrt(E||F||^4 - E||N||^4)``.

    Also records whether ``sum_ij V_ij <= E||F||^4 - E||N||^4`` holds for this
    vector.
    """
    sigma = covariance(v)
    norms = _spd_norms(sigma)
    eF4 = fourth_norm_moment(v)
    eN4 = gaussian_fourth_norm_moment(sigma)
    radicand = eF4 - eN4
    if radicand < -RADICAND_ATOL * max(1.0, eN4):
        raise ValueError(f"negative radicand E||F||^4 - E||N||^4 = {radicand}")
    radicand = max(radicand, 0.0)
    V = s_variance_matrix(v)
    v_sum = float(np.sum(V))
    value = math.sqrt(v.d) * math.sqrt(norms["sigma_op"]) * norms["sigma_inv_op"] * math.sqrt(radicand)
    dominated = v_sum <= radicand + RADICAND_ATOL * max(1.0, eN4)
    notes = []
    if not dominated:
        notes.append("sum V_ij exceeds E||F||^4 - E||N||^4 for this vector")
    return BoundReport(
        "wasserstein_fourth_moment",
        value,
        {
            "Sigma": sigma,
            "E_norm4_F": eF4,
            "E_norm4_N": eN4,
            "radicand": radicand,
            "V": V,
            "V_sum": v_sum,
            "V_sum_dominated": dominated,
            **norms,
        },
        inputs_hash(v),
        notes=notes,
    )
