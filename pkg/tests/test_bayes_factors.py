import unittest
import os
import sys
import math
import logging
import itertools

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln

# Add the parent directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from bayes_factors import (
    GPriorSpec,
    IntegralSpec,
    Method,
    Variant,
    benchmark_laplace,
    dlog_h,
    laplace_mode,
    log_bf_bic,
    log_bf_exact,
    log_bf_laplace,
    log_bf_laplace_exact,
    log_integral_J,
    log_integral_laplace_exact,
    log_integral_phi,
    phi,
    table_log_bfs,
)
from errors import DivergentIntegral, DomainError, NullModelForbidden, PerfectFit
from regression import FitSummary, ModelId, RawData, fit_all_submodels, fit_submodel, standardize

# Disable logger output during tests
logging.getLogger("Subharmonic").setLevel(logging.CRITICAL)

GRID_Q = (1, 2, 4, 8, 16)
GRID_R = (0.9, 0.5, 0.1, 0.01, 0.001)
GRID_NU_K = ((0.5, 0.0), (0.0, 2.0), (-1.0, 3.0))


def centered(n, q, r, nu, k=0.0):
    return GPriorSpec(nu=nu, k=k).integral_spec(n, q, r)


def oracle_log_J(n, q, r, nu, k=0.0, outer=None, half_width=200.0, points=1_000_000):
    """Brute-force trapezoid in tau = log g, written straight from the g-integrand"""
    outer = (n - 1) / 2.0 if outer is None else outer

    def log_integrand(tau):
        return (
            0.5 * nu * tau
            - 0.5 * k * np.log1p(np.exp(-tau))
            + 0.5 * (n - q - 1) * np.logaddexp(0.0, tau)
            - outer * np.logaddexp(0.0, np.log(r) + tau)
        )

    coarse = np.linspace(-80.0, 80.0, 16001)
    center = coarse[np.argmax(log_integrand(coarse))]
    tau = np.linspace(center - half_width, center + half_width, points)
    values = log_integrand(tau)
    peak = values.max()
    return peak + math.log(trapezoid(np.exp(values - peak), tau))


def fit(mask, q, r2, r2_check=None):
    return FitSummary(model=ModelId(mask), q=q, rss=1.0 - r2, r2=r2, r2_check=r2 if r2_check is None else r2_check)


def seeded_dataset(n=30, p=4, seed=30):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = 1.0 + X[:, 0] + 0.5 * X[:, 1] + rng.normal(size=n)
    return standardize(RawData(y=y, X=X, column_names=tuple(f"x{i + 1}" for i in range(p))))


class TestGPriorSpec(unittest.TestCase):

    def test_presets(self):
        self.assertEqual(GPriorSpec.guo_speckman(), GPriorSpec(nu=0.0, k=2.0))
        self.assertEqual(GPriorSpec.liang(-1.0), GPriorSpec(nu=-1.0, k=3.0))
        self.assertEqual(GPriorSpec.harmonic().nu, 2.0)
        self.assertTrue(GPriorSpec.subharmonic(0.5).is_distribution_robust)
        self.assertFalse(GPriorSpec.guo_speckman().is_distribution_robust)
        with self.assertRaises(DomainError):
            GPriorSpec.liang(-3.0)

    def test_validity_region(self):
        spec = GPriorSpec(nu=0.5)
        self.assertTrue(spec.admits(1))
        self.assertFalse(GPriorSpec(nu=-0.5).admits(4))
        self.assertTrue(GPriorSpec(nu=-0.5, k=1.0).admits(4))
        # the check variant gains one degree of freedom
        self.assertFalse(GPriorSpec(nu=1.0).admits(1))
        self.assertTrue(GPriorSpec(nu=1.0, variant=Variant.CHECK).admits(1))

    def test_negative_k_rejected(self):
        with self.assertRaises(DomainError):
            GPriorSpec(nu=0.5, k=-1.0)

    def test_method_parse(self):
        self.assertIs(Method.parse("Laplace-Exact"), Method.LAPLACE_EXACT)
        with self.assertRaises(DomainError):
            Method.parse("aic")


class TestLogIntegralJ(unittest.TestCase):

    def test_small_example_matches_oracle(self):
        value = log_integral_J(centered(5, 1, 0.5, 0.5))
        expected = oracle_log_J(5, 1, 0.5, 0.5)
        self.assertLess(abs(value - expected) / abs(expected), 1e-8)

    def test_nu_equal_q_diverges(self):
        """nu = q = 1 makes the integrand decay like 1/g at infinity"""
        with self.assertRaises(DivergentIntegral):
            log_integral_J(centered(3, 1, 1.0, 1.0))

    def test_divergent_region(self):
        with self.assertRaises(DivergentIntegral):
            log_integral_J(centered(10, 1, 0.5, 2.0))
        with self.assertRaises(DivergentIntegral):
            log_integral_J(centered(10, 2, 0.5, -1.0))
        with self.assertRaises(DivergentIntegral):
            log_integral_J(centered(10, 2, 0.5, 0.0))

    def test_r_domain(self):
        with self.assertRaises(DomainError):
            log_integral_J(centered(10, 2, 1.5, 0.5))
        with self.assertRaises(DomainError):
            log_integral_J(centered(10, 2, 0.0, 0.5))

    def test_rel_tol_range(self):
        with self.assertRaises(DomainError):
            log_integral_J(centered(10, 2, 0.5, 0.5), rel_tol=1e-3)

    def test_r_equal_one_is_finite(self):
        """R^2 = 0 with q = 2 > nu still gives a finite integral"""
        value = log_integral_J(centered(8, 2, 1.0, 0.5))
        self.assertAlmostEqual(value, oracle_log_J(8, 2, 1.0, 0.5), delta=1e-7)

    def test_oracle_grid(self):
        for n in (20, 100, 500):
            for q, r, (nu, k) in itertools.product(GRID_Q, GRID_R, GRID_NU_K):
                with self.subTest(n=n, q=q, r=r, nu=nu, k=k):
                    value = log_integral_J(centered(n, q, r, nu, k))
                    self.assertLess(abs(value - oracle_log_J(n, q, r, nu, k)), 1e-7)

    def test_check_variant_matches_oracle(self):
        spec = GPriorSpec(nu=0.5, variant=Variant.CHECK).integral_spec(12, 0, 0.7)
        self.assertEqual(spec.q_eff, 1.0)
        self.assertAlmostEqual(log_integral_J(spec), oracle_log_J(12, 0, 0.7, 0.5, outer=6.0), delta=1e-7)

    def test_decreasing_in_r(self):
        values = [log_integral_J(centered(40, 3, r, 0.5)) for r in (0.1, 0.3, 0.6, 0.9)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))


class TestLaplace(unittest.TestCase):

    def test_mode_quadratic_example(self):
        z_hat, _, curvature = laplace_mode(centered(101, 2, 0.5, 1.0))
        self.assertAlmostEqual(z_hat, 49.5 + math.sqrt(49.5 ** 2 + 2.0), places=10)
        self.assertAlmostEqual(z_hat, 99.0202, places=4)
        self.assertLess(curvature, 0.0)

    def test_mode_is_stationary(self):
        for n, q, r, nu, k in [(101, 2, 0.5, 1.0, 0.0), (30, 4, 0.2, 0.5, 0.0), (500, 3, 0.9, -1.0, 3.0), (10 ** 6, 2, 0.5, 1.0, 0.0)]:
            spec = centered(n, q, r, nu, k)
            z_hat, _, _ = laplace_mode(spec)
            self.assertLess(abs(float(dlog_h(math.log(z_hat), spec))), 1e-12 * spec.m)

    def test_mode_asymptote(self):
        n = 10 ** 6
        z_hat, _, _ = laplace_mode(centered(n, 2, 0.5, 1.0))
        self.assertAlmostEqual(z_hat / n, (1.0 / 0.5 - 1.0) / (2 - 1.0), delta=0.01)

    def test_mode_continuity_at_zero_nu_plus_k(self):
        n, q, r, nu = 101, 2, 0.5, 1e-8
        z_hat, _, _ = laplace_mode(centered(n, q, r, nu))
        limit = ((n - 1) * (1 - r) / (q - nu) - 1) / r
        self.assertAlmostEqual(z_hat / limit, 1.0, delta=1e-6)

    def test_laplace_domain(self):
        with self.assertRaises(DomainError):
            laplace_mode(centered(100, 2, 0.5, 2.0))
        with self.assertRaises(DomainError):
            log_integral_laplace_exact(centered(100, 2, 1.0, 0.5))

    def test_exact_mode_laplace_close_to_quadrature(self):
        spec = centered(500, 3, 0.3, 0.5)
        exact = log_integral_J(spec)
        self.assertLess(abs(log_integral_laplace_exact(spec) - exact) / abs(exact), 0.005)

    def test_exact_mode_laplace_over_grid(self):
        """0.5% at n=500 everywhere except s = q - nu <= 1, where the integrand is skewed (1.1%)"""
        for q, r, (nu, k) in itertools.product(GRID_Q, GRID_R, GRID_NU_K):
            with self.subTest(q=q, r=r, nu=nu, k=k):
                spec = centered(500, q, r, nu, k)
                exact = log_integral_J(spec)
                error = abs(log_integral_laplace_exact(spec) - exact) / abs(exact)
                self.assertLess(error, 0.011 if q - nu <= 1.0 else 0.005)

    def test_exact_mode_laplace_against_closed_form(self):
        spec = centered(10 ** 5, 2, 0.5, 0.0, k=2.0)
        closed = log_integral_phi(spec)
        self.assertLess(abs(log_integral_laplace_exact(spec) - closed) / abs(closed), 0.001)

    def test_closed_form_convergence(self):
        """Relative log-scale error of the phi closed form shrinks with n"""
        for q, r, (nu, k) in itertools.product(GRID_Q, GRID_R, GRID_NU_K):
            with self.subTest(q=q, r=r, nu=nu, k=k):
                rows = benchmark_laplace([100, 1000, 10000, 100000], q, nu, r, k)
                errors = [row["rel_err_phi"] for row in rows]
                self.assertTrue(all(a > b for a, b in zip(errors, errors[1:])), errors)
                self.assertLess(errors[-1], 0.01)

    def test_benchmark_rows(self):
        rows = benchmark_laplace([100, 1000, 10000], 2, 0.5, 0.5)
        self.assertEqual([row["n"] for row in rows], [100, 1000, 10000])
        rel = [row["rel_err_laplace_exact"] for row in rows]
        self.assertTrue(rel[0] > rel[1] > rel[2])
        for row in rows:
            self.assertAlmostEqual(row["abs_err_phi"], abs(row["phi_closed_form"] - row["log_j"]))


class TestPhi(unittest.TestCase):

    def test_values(self):
        self.assertAlmostEqual(phi(1.0, 0.5), 0.5 / math.e, places=12)
        self.assertAlmostEqual(phi(1.0, 0.5), 0.183940, places=6)
        self.assertAlmostEqual(phi(2.0, 0.5), math.exp(-2.0), places=12)
        self.assertAlmostEqual(phi(2.0, 0.5), 0.135335, places=6)

    def test_positive_near_edge(self):
        value = phi(0.05, 0.999)
        self.assertGreater(value, 0.0)
        self.assertTrue(math.isfinite(value))

    def test_domain(self):
        for s, r in [(0.0, 0.5), (-1.0, 0.5), (1.0, 0.0), (1.0, 1.0)]:
            with self.assertRaises(DomainError):
                phi(s, r)


class TestBayesFactors(unittest.TestCase):

    def test_bic_examples(self):
        full = fit(3, 2, 0.75)
        value = log_bf_bic(fit(1, 1, 0.5), full, n=10, p=2).value
        self.assertAlmostEqual(value, math.log(math.sqrt(0.5 ** 10 * 10)), places=12)
        self.assertAlmostEqual(math.exp(value), 0.098821, places=6)
        null_value = log_bf_bic(fit(0, 0, 0.0), full, n=10, p=2).value
        self.assertAlmostEqual(null_value, 0.5 * (10 * math.log(0.25) + 2 * math.log(10)), places=12)
        self.assertAlmostEqual(null_value, -4.6289, delta=1e-4)

    def test_bic_perfect_fit(self):
        with self.assertRaises(PerfectFit):
            log_bf_bic(fit(1, 1, 1.0), fit(3, 2, 1.0), n=10, p=2)

    def test_self_factor_is_zero(self):
        data = seeded_dataset()
        full = fit_submodel(data, ModelId.full(4))
        spec = GPriorSpec(nu=0.5)
        self.assertEqual(log_bf_exact(full, full, data.n, spec).value, 0.0)
        self.assertEqual(log_bf_laplace_exact(full, full, data.n, spec).value, 0.0)
        self.assertEqual(log_bf_laplace(full, full, data.n, 4, 0.5).value, 0.0)
        self.assertEqual(log_bf_bic(full, full, data.n, 4).value, 0.0)

    def test_exact_factor_matches_oracle(self):
        data = seeded_dataset()
        fit_g = fit_submodel(data, ModelId.from_members([1, 2]))
        fit_f = fit_submodel(data, ModelId.full(4))
        value = log_bf_exact(fit_g, fit_f, data.n, GPriorSpec(nu=0.5)).value
        expected = oracle_log_J(30, 2, 1.0 - fit_g.r2, 0.5) - oracle_log_J(30, 4, 1.0 - fit_f.r2, 0.5)
        self.assertAlmostEqual(value, expected, delta=1e-7)

    def test_null_model_forbidden_for_centered(self):
        data = seeded_dataset()
        null = fit_submodel(data, ModelId.null())
        full = fit_submodel(data, ModelId.full(4))
        with self.assertRaises(NullModelForbidden):
            log_bf_exact(null, full, data.n, GPriorSpec(nu=0.5))
        value = log_bf_exact(null, full, data.n, GPriorSpec(nu=0.5, variant=Variant.CHECK)).value
        self.assertTrue(math.isfinite(value))

    def test_laplace_factor_against_exact(self):
        """At n = 500 the phi factor differs from quadrature by the Stirling offset of Gamma(s/2)"""
        n, nu = 500, 0.5
        fit_g, fit_f = fit(3, 2, 0.5), fit(15, 4, 0.6)
        laplace = log_bf_laplace(fit_g, fit_f, n, 4, nu).value
        exact = log_bf_exact(fit_g, fit_f, n, GPriorSpec(nu=nu)).value
        self.assertLess(abs(laplace - exact), 0.1)

        def stirling_gap(s):
            a = s / 2.0
            return gammaln(a) - (0.5 * math.log(2.0 * math.pi / a) + a * math.log(a) - a)

        self.assertAlmostEqual(laplace - exact, stirling_gap(4 - nu) - stirling_gap(2 - nu), delta=0.03)

    def test_laplace_factor_domain(self):
        with self.assertRaises(DomainError):
            log_bf_laplace(fit(0, 0, 0.0), fit(3, 2, 0.6), 20, 2, 0.5)
        with self.assertRaises(DomainError):
            log_bf_laplace(fit(1, 1, 0.5), fit(3, 2, 0.6), 20, 2, 1.0)

    def test_laplace_factor_is_bic_plus_phi_correction(self):
        fit_g, fit_f = fit(1, 1, 0.4), fit(7, 3, 0.7)
        expected = 0.5 * math.log(phi(1 - 0.5, 0.6) / phi(3 - 0.5, 0.3)) + log_bf_bic(fit_g, fit_f, 40, 3).value
        self.assertAlmostEqual(log_bf_laplace(fit_g, fit_f, 40, 3, 0.5).value, expected, places=10)

    def test_coherence(self):
        """Pairwise factors are reciprocal and transitive"""
        data = seeded_dataset(n=40, p=5, seed=4)
        fits = {s.model.mask: s for s in fit_all_submodels(data).summaries()}
        rng = np.random.default_rng(9)
        spec = GPriorSpec(nu=0.5)
        masks = np.array(sorted(fits))

        def bf(a, b, exact=False):
            if exact:
                return log_bf_exact(fits[a], fits[b], data.n, spec).value
            return log_bf_laplace_exact(fits[a], fits[b], data.n, spec).value

        for trial in range(500):
            a, b, c = (int(m) for m in rng.choice(masks, size=3, replace=False))
            exact = trial < 30
            self.assertAlmostEqual(bf(a, b, exact), -bf(b, a, exact), delta=1e-10)
            self.assertAlmostEqual(bf(a, b, exact) + bf(b, c, exact), bf(a, c, exact), delta=1e-10)


class TestTableLogBfs(unittest.TestCase):

    def setUp(self):
        self.data = seeded_dataset(n=35, p=4, seed=12)
        self.table = fit_all_submodels(self.data)
        self.full = self.table.summary(self.table.full_index)

    def test_vectorized_matches_scalar(self):
        spec = GPriorSpec(nu=0.5)
        bic = table_log_bfs(self.table, Method.BIC, spec)
        phi_form = table_log_bfs(self.table, Method.LAPLACE_PHI, spec)
        laplace = table_log_bfs(self.table, Method.LAPLACE_EXACT, spec)
        exact = table_log_bfs(self.table, Method.EXACT, spec, rows=[0, 5, 14])
        for i, summary in enumerate(self.table.summaries()):
            self.assertAlmostEqual(bic[i], log_bf_bic(summary, self.full, 35, 4).value, places=10)
            self.assertAlmostEqual(phi_form[i], log_bf_laplace(summary, self.full, 35, 4, 0.5).value, places=10)
            self.assertAlmostEqual(laplace[i], log_bf_laplace_exact(summary, self.full, 35, spec).value, places=9)
        for j, i in enumerate([0, 5, 14]):
            self.assertAlmostEqual(exact[j], log_bf_exact(self.table.summary(i), self.full, 35, spec).value, places=12)

    def test_check_variant_vectorized(self):
        spec = GPriorSpec(nu=0.5, variant=Variant.CHECK)
        values = table_log_bfs(self.table, Method.LAPLACE_PHI, spec)
        for i, summary in enumerate(self.table.summaries()):
            expected = log_bf_laplace(summary, self.full, 35, 4, 0.5, Variant.CHECK).value
            self.assertAlmostEqual(values[i], expected, places=10)

    def test_exact_mode_laplace_tracks_quadrature(self):
        spec = GPriorSpec(nu=0.5)
        laplace = table_log_bfs(self.table, Method.LAPLACE_EXACT, spec)
        exact = table_log_bfs(self.table, Method.EXACT, spec)
        post = np.sort(np.exp(exact - exact.max()) / np.exp(exact - exact.max()).sum())[::-1]
        if post[0] - post[1] <= 0.05:
            self.skipTest("top two models are a near tie")
        self.assertEqual(int(np.argmax(laplace)), int(np.argmax(exact)))

    def test_divergent_prior_rejected(self):
        with self.assertRaises(DivergentIntegral):
            table_log_bfs(self.table, Method.EXACT, GPriorSpec(nu=1.5))


if __name__ == '__main__':
    unittest.main()
