import math

import numpy as np
import pytest

from chaoslab.chaos_algebra import ChaosExpansion, from_kernel, l2_distance, multiply, second_moment
from chaoslab.exchange_pairs import (
    DiagnosticsReport,
    GibbsPair,
    MehlerPair,
    ShiftedPair,
    condition_on_first_half,
    conditioned_product,
    embed,
    exchangeability_mc_test,
    gibbs_drift,
    gibbs_quadratic_check,
    gibbs_rate_table,
    gibbs_residual_norm,
    loglog_slope,
    mehler_difference,
    mehler_drift_check,
    mehler_drift_closed_form,
    mehler_fourth_check,
    mehler_fourth_moment,
    mehler_quadratic_check,
    mehler_rate_table,
    mehler_second_moment,
    mehler_transport,
    pair_covariance,
)
from chaoslab.families import BlockMismatchError, offdiag_rand, qvar
from chaoslab.grid_kernel import Grid, GridMismatchError

from .conftest import random_kernel


class TestMehlerPair:
    def test_map_is_isometry(self):
        assert MehlerPair(0.3, Grid.uniform(4)).map.is_isometry()

    def test_negative_t(self):
        with pytest.raises(ValueError):
            MehlerPair(-1.0, Grid.uniform(2))

    def test_transport_needs_positive_t(self, rng):
        with pytest.raises(ValueError):
            mehler_transport(from_kernel(1, random_kernel(rng, 1, 3)), 0.0)

    def test_condition_needs_doubled(self, rng):
        with pytest.raises(GridMismatchError):
            condition_on_first_half(from_kernel(1, random_kernel(rng, 1, 3)))

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_conditional_expectation(self, rng, p):
        f = random_kernel(rng, p, 4)
        t = 0.37
        cond = condition_on_first_half(mehler_transport(from_kernel(p, f), t))
        assert np.allclose(cond.terms[p].coeffs, math.exp(-p * t) * f.coeffs, atol=1e-14)

    def test_same_law(self, rng):
        F = from_kernel(2, random_kernel(rng, 2, 3))
        assert math.isclose(second_moment(mehler_transport(F, 0.2)), second_moment(F), rel_tol=1e-12)

    def test_pair_covariance(self, rng):
        F = from_kernel(3, random_kernel(rng, 3, 3))
        assert math.isclose(pair_covariance(F, 0.5), math.exp(-1.5) * second_moment(F), rel_tol=1e-12)

    def test_conditioned_product_matches_full(self, rng):
        F = from_kernel(2, random_kernel(rng, 2, 3))
        G = from_kernel(1, random_kernel(rng, 1, 3)) + from_kernel(2, random_kernel(rng, 2, 3))
        H, K = mehler_difference(F, 0.3), mehler_transport(G, 0.3) + embed(F)
        full = condition_on_first_half(multiply(H, K))
        assert l2_distance(conditioned_product(H, K), full) < 1e-12


class TestMehlerChecks:
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_drift_closed_form(self, rng, p):
        f = random_kernel(rng, p, 4)
        for t in (1.0, 0.1, 0.01):
            assert math.isclose(mehler_drift_check(f, p, t), mehler_drift_closed_form(f, p, t), rel_tol=1e-9)

    def test_second_moment_closed_form(self, rng):
        f = random_kernel(rng, 2, 3)
        s2 = second_moment(from_kernel(2, f))
        assert math.isclose(mehler_second_moment(f, 2, 0.2), 2 * s2 * (1 - math.exp(-0.4)), rel_tol=1e-12)

    def test_quadratic_first_chaos(self, rng):
        # F = I_1(e): E[(F_t - F)^2 | B] = (1 - e^{-t})^2 F^2 + (1 - e^{-2t}) ||e||^2
        f = random_kernel(rng, 1, 4)
        t = 0.05
        F = from_kernel(1, f)
        s2 = second_moment(F)
        Q = multiply(F, F).scale(math.expm1(-t) ** 2 / t)
        Q = Q + ChaosExpansion(F.grid, -math.expm1(-2 * t) / t * s2, {})
        target = 2 * s2
        expected = l2_distance(Q, ChaosExpansion(F.grid, target, {}))
        assert math.isclose(mehler_quadratic_check(f, 1, t), expected, rel_tol=1e-9)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_fourth_routes_agree(self, rng, p):
        f = random_kernel(rng, p, 3)
        for t in (0.5, 0.01):
            a = mehler_fourth_moment(f, p, t, "doubled")
            b = mehler_fourth_moment(f, p, t, "semigroup")
            assert math.isclose(a, b, rel_tol=1e-9)

    def test_fourth_unknown_method(self, rng):
        with pytest.raises(ValueError):
            mehler_fourth_moment(random_kernel(rng, 1, 2), 1, 0.1, "magic")

    def test_rates(self):
        f = qvar(8)
        ts = [1e-1, 1e-2, 1e-3]
        for fn in (mehler_drift_check, mehler_quadratic_check, mehler_fourth_check):
            slope = loglog_slope(ts, [fn(f, 2, t) for t in ts])
            assert 0.9 <= slope <= 1.1

    def test_rate_table(self):
        rep = mehler_rate_table(qvar(4), 2)
        assert len(rep.rows) == 9
        assert rep.rows[0]["rate_estimate"] is None
        assert 0.9 < rep.rows[-1]["rate_estimate"] < 1.1
        csv_text = rep.to_csv()
        assert csv_text.splitlines()[0] == ",".join(DiagnosticsReport.COLUMNS)
        assert 0.9 < rep.slope("mehler-drift") < 1.1


class TestGibbs:
    def test_block_mismatch(self):
        with pytest.raises(BlockMismatchError):
            GibbsPair(3, Grid.uniform(8))

    def test_swap_map_isometry(self):
        assert GibbsPair(2, Grid.uniform(4)).swap_map(1).is_isometry()

    @pytest.mark.parametrize("n", [1, 2, 3, 6])
    def test_first_chaos_exact(self, rng, n):
        _, dist = gibbs_drift(from_kernel(1, random_kernel(rng, 1, 6)), n)
        assert dist == 0.0

    def test_diagonal_free_n_equals_m(self):
        _, dist = gibbs_drift(from_kernel(2, offdiag_rand(2, 6, 3)), 6)
        assert dist < 1e-15

    @pytest.mark.parametrize("p,n", [(2, 2), (2, 4), (3, 2), (3, 4)])
    def test_residual_oracle(self, rng, p, n):
        f = random_kernel(rng, p, 4)
        _, dist = gibbs_drift(from_kernel(p, f), n)
        assert math.isclose(dist, gibbs_residual_norm(f, p, n), rel_tol=1e-12)

    def test_qvar_decreasing(self):
        F = from_kernel(2, qvar(1, 16))
        dists = [gibbs_drift(F, n)[1] for n in (2, 4, 8, 16)]
        assert all(a > b for a, b in zip(dists, dists[1:]))

    def test_pure_required(self, rng):
        F = from_kernel(1, random_kernel(rng, 1, 2)) + from_kernel(2, random_kernel(rng, 2, 2))
        with pytest.raises(ValueError):
            gibbs_drift(F, 2)

    def test_quadratic_first_chaos(self):
        # n E[(F' - F)^2 | W] = sum_k a_k^2 (1 + xi_k^2) for F = sum_k a_k xi_k, n = m
        m = 4
        a = np.array([1.0, -2.0, 0.5, 1.5])
        f = random_kernel(np.random.default_rng(0), 1, m)
        f = type(f)(f.grid, a * math.sqrt(m), symmetric=True)
        expected = math.sqrt(2 * np.sum(a**4))
        assert math.isclose(gibbs_quadratic_check(f, 1, m), expected, rel_tol=1e-12)

    def test_rate_table(self):
        rep = gibbs_rate_table(qvar(2, 8), 2, [2, 4, 8], quadratic=False)
        assert [r["construction"] for r in rep.rows] == ["gibbs-drift"] * 3


class TestExchangeabilityMC:
    def test_underpowered(self, rng):
        F = from_kernel(2, qvar(4))
        with pytest.raises(ValueError):
            exchangeability_mc_test(MehlerPair(0.1, F.grid), F, 100)

    def test_zero_time_is_exact(self):
        F = from_kernel(2, qvar(4))
        rep = exchangeability_mc_test(MehlerPair(0.0, F.grid), F, 20_000, seed=1)
        assert rep.passed and all(r["discrepancy"] == 0.0 for r in rep.rows)

    def test_mehler_and_gibbs_pass(self):
        F = from_kernel(2, qvar(4))
        assert exchangeability_mc_test(MehlerPair(0.3, F.grid), F, 50_000, seed=2).passed
        assert exchangeability_mc_test(GibbsPair(2, F.grid), F, 50_000, seed=3).passed

    def test_shifted_fails(self):
        F = from_kernel(2, qvar(4))
        assert not exchangeability_mc_test(ShiftedPair(0.5, F.grid), F, 50_000, seed=4).passed

    def test_worker_invariance(self):
        F = from_kernel(2, qvar(4))
        a = exchangeability_mc_test(GibbsPair(2, F.grid), F, 40_000, seed=5, workers=1)
        b = exchangeability_mc_test(GibbsPair(2, F.grid), F, 40_000, seed=5, workers=3)
        assert a.rows == b.rows
