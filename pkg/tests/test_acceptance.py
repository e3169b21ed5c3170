"""Acceptance suite: the ten end-to-end criteria at their stated tolerances.

Each test records one PASS/FAIL line (with wall time against its budget);
the lines are printed in the pytest terminal summary, and running this file
directly prints them as well.
"""
import itertools
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from numpy.polynomial import hermite_e

from chaoslab import exchange_pairs as ex
from chaoslab import mc_lab
from chaoslab.chaos_algebra import (
    ChaosExpansion,
    constant,
    evaluate,
    fourth_moment_pure,
    from_kernel,
    gradient_inner,
    hypercontractivity_constant,
    l2_distance,
    multiply,
    ou_generator,
    second_moment,
)
from chaoslab.families import offdiag_rand, pair2d, qvar, random_symmetric
from chaoslab.grid_kernel import Grid, Kernel, symmetrize
from chaoslab.stein_bounds import (
    covariance,
    gaussian_fourth_norm_moment,
    intermediate_bound,
    kappa,
    kappa_via_gradient,
    nprr_bound,
    pure_variance,
    smooth_bound,
    tv_bound,
    wasserstein_bound,
)

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    state = {"detail": ""}
    start = time.perf_counter()
    ok = False
    try:
        yield state
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        timely = elapsed < budget_s
        status = "PASS" if ok and timely else "FAIL"
        extra = "" if timely else f" (over the {budget_s:g}s budget)"
        RESULTS.append(f"[{status}] criterion {number:>2}: {title} | {state['detail']} | {elapsed:.1f}s{extra}")
    assert timely, f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s"


def _rand_kernel(rng, p, m):
    return symmetrize(Kernel(Grid.uniform(m), rng.standard_normal((m,) * p)))


def test_criterion_01_product_formula():
    with criterion(1, "product formula exactness", 10) as st:
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(50):
            p, q = rng.integers(1, 4, size=2)
            m = int(rng.integers(2, 9))
            F, G = from_kernel(p, _rand_kernel(rng, p, m)), from_kernel(q, _rand_kernel(rng, q, m))
            xi = rng.standard_normal((100, m))
            lhs = evaluate(multiply(F, G), xi)
            rhs = evaluate(F, xi) * evaluate(G, xi)
            scale = np.maximum(np.abs(rhs), 1e-3 * np.sqrt(second_moment(F) * second_moment(G)))
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / scale)))
        st["detail"] = f"max relative error {worst:.2e} <= 1e-9"
        assert worst <= 1e-9


def test_criterion_02_mehler_conditional():
    with criterion(2, "E[F_t | B] = e^{-pt} F on the doubled grid", 5) as st:
        rng = np.random.default_rng(102)
        worst = 0.0
        for p in (1, 2, 3):
            f = _rand_kernel(rng, p, 8)
            F = from_kernel(p, f)
            for t in (1.0, 0.1, 0.01):
                cond = ex.condition_on_first_half(ex.mehler_transport(F, t))
                assert set(cond.terms) == {p} and cond.constant == 0.0
                worst = max(worst, float(np.max(np.abs(cond.terms[p].coeffs - math.exp(-p * t) * f.coeffs))))
        st["detail"] = f"max kernel deviation {worst:.2e} <= 1e-12"
        assert worst <= 1e-12


def test_criterion_03_mehler_rates():
    with criterion(3, "Mehler drift / quadratic / fourth rate tables", 120) as st:
        ts = [1e-1, 1e-2, 1e-3]
        slopes = {}
        worst_closed = 0.0
        for label, f, p in [("qvar", qvar(16), 2), ("offdiag", offdiag_rand(3, 12, seed=7), 3)]:
            report = ex.mehler_rate_table(f, p, ts)
            for name in ("mehler-drift", "mehler-quadratic", "mehler-fourth"):
                slopes[f"{label}:{name.split('-')[1]}"] = report.slope(name)
            for row in report.rows:
                if row["construction"] == "mehler-drift":
                    closed = ex.mehler_drift_closed_form(f, p, row["parameter"])
                    worst_closed = max(worst_closed, abs(row["distance"] - closed))
        st["detail"] = ("slopes " + ", ".join(f"{k}={v:.3f}" for k, v in slopes.items())
                        + f"; drift vs closed form {worst_closed:.1e}")
        assert all(0.9 <= s <= 1.1 for s in slopes.values())
        assert worst_closed <= 1e-10


def test_criterion_04_gibbs_drift():
    with criterion(4, "Gibbs drift diagnostics", 60) as st:
        rng = np.random.default_rng(104)
        exact = []
        for n in (1, 2, 4, 8):
            exact.append(ex.gibbs_drift(from_kernel(1, _rand_kernel(rng, 1, 8)), n)[1])
        for m in (4, 6, 8):
            exact.append(ex.gibbs_drift(from_kernel(2, offdiag_rand(2, m, seed=m)), m)[1])
        F = from_kernel(2, qvar(1, 64))
        dists = [ex.gibbs_drift(F, n)[1] for n in (4, 8, 16, 32, 64)]
        st["detail"] = (f"exact cases max {max(exact):.1e}; full qvar m=64: "
                        + " > ".join(f"{d:.4f}" for d in dists))
        assert all(d == 0.0 for d in exact)
        assert all(a > b for a, b in zip(dists, dists[1:]))


def test_criterion_05_kappa_identity():
    with criterion(5, "kappa/3 = E[F^2(<DF,-DL^-1 F> - sigma^2)] and ordering", 30) as st:
        rng = np.random.default_rng(105)
        worst = 0.0
        ordered = True
        for _ in range(50):
            p = int(rng.integers(1, 5))
            m = int(rng.integers(2, 9))
            f = random_symmetric(p, m, rng)
            k1 = kappa(f, p)
            k2 = kappa_via_gradient(f, p)
            ordered &= k1 >= 0 and intermediate_bound(f, p) <= tv_bound(f, p) * (1 + 1e-12)
            worst = max(worst, abs(k1 - k2) / max(abs(k1), 1e-12 * pure_variance(f, p) ** 2, 1e-300))
        st["detail"] = f"max relative gap {worst:.1e} <= 1e-10; kappa >= 0 and intermediate <= tv: {ordered}"
        assert worst <= 1e-10 and ordered


def _hermite2_cumulant4() -> float:
    x, w = hermite_e.hermegauss(20)
    w = w / w.sum()
    h = x**2 - 1
    return float(np.sum(w * h**4) - 3 * np.sum(w * h**2) ** 2)


def test_criterion_06_fourth_moment_experiment():
    with criterion(6, "qvar fourth-moment experiment, N=1e6", 300) as st:
        k4 = _hermite2_cumulant4()
        rows = []
        for n in (4, 16, 64):
            f = qvar(n)
            k = kappa(f, 2)
            assert math.isclose(k, 12 / n, rel_tol=1e-12)
            assert math.isclose(k, n * k4 / (2 * n) ** 2, rel_tol=1e-12)
            batch = mc_lab.sample(from_kernel(2, f), 10**6, seed=606 + n)
            est = mc_lab.tv_binned(batch, 1.0)
            rows.append((n, est.value, est.stderr, tv_bound(f, 2)))
        assert abs(rows[-1][3] - 0.353553) <= 1e-6
        dominated = all(v <= b + 0.01 + 4 * se for _, v, se, b in rows)
        decreasing = all(a[1] > b[1] and a[3] > b[3] for a, b in zip(rows, rows[1:]))
        st["detail"] = "; ".join(f"n={n}: tv_binned {v:.4f}+-{se:.4f} vs bound {b:.4f}" for n, v, se, b in rows)
        assert dominated and decreasing


def test_criterion_07_multivariate():
    with criterion(7, "pair2d smooth discrepancies and multivariate bounds, N=1e6", 300) as st:
        v = pair2d(8)
        sigma = covariance(v)
        assert np.all(np.linalg.eigvalsh(sigma) > 0)
        batch = mc_lab.sample_vector(v, 10**6, seed=707)
        worst_margin = -math.inf
        for gid in mc_lab.battery(v.d):
            est = mc_lab.smooth_discrepancy(batch, sigma, gid)
            bound = smooth_bound(v, est.params["M2"])
            worst_margin = max(worst_margin, est.value - bound - 4 * est.stderr)
        wb, nb = wasserstein_bound(v), nprr_bound(v)
        radicand, v_sum = nb.ingredients["radicand"], nb.ingredients["V_sum"]
        eN4 = gaussian_fourth_norm_moment(sigma)
        mc_est, mc_se = mc_lab.gaussian_norm4_mc(sigma, 10**6, seed=708)
        st["detail"] = (f"worst (disc - bound - 4SE) {worst_margin:.3f} <= 0; W-bounds {wb.value:.4f}, {nb.value:.4f}; "
                        f"sum V {v_sum:.4f} <= radicand {radicand:.4f}; E|N|^4 {eN4:.4f} vs MC {mc_est:.4f}+-{mc_se:.4f}")
        assert worst_margin <= 0
        assert math.isfinite(wb.value) and math.isfinite(nb.value)
        assert v_sum <= radicand + 1e-10
        assert abs(mc_est - eN4) <= 4 * mc_se


def test_criterion_08_exchangeability():
    with criterion(8, "exchangeability MC tests, N=1e6", 180) as st:
        F = from_kernel(2, qvar(16))
        mehler = ex.exchangeability_mc_test(ex.MehlerPair(0.5, F.grid), F, 10**6, seed=801)
        gibbs = ex.exchangeability_mc_test(ex.GibbsPair(4, F.grid), F, 10**6, seed=802)
        broken = ex.exchangeability_mc_test(ex.ShiftedPair(0.5, F.grid), F, 10**6, seed=803)

        def zmax(rep):
            return max(r["z"] for r in rep.rows)

        st["detail"] = (f"Mehler max z {zmax(mehler):.2f}, Gibbs max z {zmax(gibbs):.2f}, "
                        f"broken pair max z {zmax(broken):.1f}")
        assert mehler.passed and gibbs.passed and not broken.passed


def test_criterion_09_hypercontractivity():
    with criterion(9, "E F^4 <= c_{4,p} (E F^2)^2", 30) as st:
        rng = np.random.default_rng(109)
        sizes = {1: 8, 2: 8, 3: 6, 4: 4}
        worst = {p: 0.0 for p in sizes}
        for i in range(100):
            p = 1 + i % 4
            f = random_symmetric(p, sizes[p], rng)
            ratio = fourth_moment_pure(p, f) / (hypercontractivity_constant(p) * pure_variance(f, p) ** 2)
            worst[p] = max(worst[p], ratio)
        # p = 1 is Gaussian: equality, so allow floating-point rounding
        st["detail"] = "max E F^4 / (c E[F^2]^2) by p: " + ", ".join(f"{p}: {r:.4f}" for p, r in worst.items())
        assert max(worst.values()) <= 1.0 + 1e-12


def _power(F: ChaosExpansion, k: int) -> ChaosExpansion:
    out = constant(F.grid, 1.0)
    for _ in range(k):
        out = multiply(out, F)
    return out


def _monomial(Fs, exps) -> ChaosExpansion:
    out = constant(Fs[0].grid, 1.0)
    for F, k in zip(Fs, exps):
        if k:
            out = multiply(out, _power(F, k))
    return out


def _diffusion_residual(Fs, exps, gamma_weight: float) -> tuple[float, float]:
    lhs = ou_generator(_monomial(Fs, exps))
    rhs = constant(Fs[0].grid, 0.0)
    d = len(Fs)
    for j in range(d):
        if exps[j]:
            e = list(exps)
            e[j] -= 1
            rhs = rhs + multiply(_monomial(Fs, e), ou_generator(Fs[j])).scale(exps[j])
    for i, j in itertools.product(range(d), repeat=2):
        e = list(exps)
        c = e[i]
        e[i] -= 1
        if e[i] < 0:
            continue
        c *= e[j]
        e[j] -= 1
        if e[j] < 0 or c == 0:
            continue
        rhs = rhs + multiply(_monomial(Fs, e), gradient_inner(Fs[i], Fs[j])).scale(gamma_weight * c)
    return l2_distance(lhs, rhs), math.sqrt(second_moment(lhs))


def _random_vectors(seed: int, count: int, d: int = 2, m: int = 3):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(m)
    for _ in range(count):
        yield [ChaosExpansion(grid, rng.standard_normal(), {1: _rand_kernel(rng, 1, m), 2: _rand_kernel(rng, 2, m)})
               for _ in range(d)]


MONOMIALS = [(a, b) for a in range(4) for b in range(4) if 1 <= a + b <= 3]


def test_criterion_10_diffusion_identity():
    # The identity holds with unit weight on Gamma = <DF_i, DF_j>; see test_doubled_gamma_weight_is_refuted.
    with criterion(10, "L Psi(F) = sum dPsi LF + sum d2Psi Gamma(F_i,F_j)", 60) as st:
        worst = 0.0
        for Fs in _random_vectors(110, 20):
            for exps in MONOMIALS:
                res, size = _diffusion_residual(Fs, exps, 1.0)
                worst = max(worst, res / max(size, 1.0))
        st["detail"] = f"max relative residual {worst:.1e} <= 1e-9 (unit weight on Gamma)"
        assert worst <= 1e-9


def test_doubled_gamma_weight_is_refuted():
    # With Gamma = (L(FG) - F LG - G LF)/2 = <DF, DG>, a factor 2 in front of the
    # second-order sum breaks the identity already for Psi(x) = x^2, F = I_1(e).
    grid = Grid.uniform(2)
    F = from_kernel(1, Kernel(grid, np.array([1.0, 1.0])))
    res, _ = _diffusion_residual([F], (2,), 2.0)
    assert math.isclose(res, 2.0)
    for Fs in _random_vectors(111, 3):
        assert _diffusion_residual(Fs, (2, 1), 2.0)[0] > 1e-3


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
