import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkernel.core import CumulativeKernel, Grid, QuoteSet, l2_distance, price_put, sup_distance
from pkernel.errors import ConvergenceError, InfeasibleError, InputError, SpecError
from pkernel.estimators import (
    FitOptions,
    divergence,
    fit_cls,
    fit_me_exact,
    fit_rme,
    lambda_schedule,
)
from pkernel.synth import KernelSpec, NoiseSpec, StrikeDensitySpec, generate_quotes, make_kernel, sample_strikes


def noisy_quotes(P, n, sigma=0.01, seed=0):
    K = sample_strikes(n, StrikeDensitySpec(K_bar=P.grid.B), seed)
    return generate_quotes(P, K, NoiseSpec(sigma=sigma, seed=seed))


class TestFitCls:
    def test_zero_quotes(self, unit_grid):
        q = QuoteSet(np.linspace(0.1, 0.9, 7), np.zeros(7))
        est = fit_cls(q, unit_grid)
        assert np.all(est.kernel.values == 0)
        assert est.objective == 0

    def test_identity_recovery(self, unit_grid):
        K = np.linspace(0, 1, 200)
        est = fit_cls(QuoteSet(K, K ** 2 / 2), unit_grid)
        assert sup_distance(est.kernel, CumulativeKernel.from_values(unit_grid, unit_grid.nodes), K.max()) <= 5e-3

    def test_bimodal_round_trip(self, unit_grid, bimodal):
        q = noisy_quotes(bimodal, 500, sigma=0.0, seed=1)
        est = fit_cls(q, unit_grid)
        assert est.mse_term <= 1e-16
        assert sup_distance(est.kernel, bimodal, q.max_strike) <= 1e-2

    def test_fitted_curve_shape(self, unit_grid, bimodal):
        q = noisy_quotes(bimodal, 100, sigma=0.02, seed=2)
        est = fit_cls(q, unit_grid)
        s = price_put(est.kernel, unit_grid.nodes)
        assert np.all(np.diff(s) >= -1e-15)
        assert np.all(s[2:] - 2 * s[1:-1] + s[:-2] >= -1e-14)
        assert est.kkt_residual <= 1e-8

    def test_extrapolated_flags(self, unit_grid, bimodal):
        K = np.linspace(0.0, 0.5, 40)
        est = fit_cls(generate_quotes(bimodal, K, NoiseSpec(sigma=0.0)), unit_grid)
        flags = est.extrapolated
        assert not flags[unit_grid.nodes <= 0.5].any()
        assert flags[unit_grid.nodes > 0.5].all()

    def test_nonunique_beyond_strikes(self, unit_grid, bimodal):
        K = np.linspace(0.0, 0.5, 40)
        est = fit_cls(generate_quotes(bimodal, K, NoiseSpec(sigma=0.0)), unit_grid)
        # increments of cells entirely above the last strike have zero columns
        assert est.nonunique[1:][unit_grid.nodes[:-1] >= 0.5].all()

    def test_empty(self, unit_grid):
        with pytest.raises(InputError):
            fit_cls(None, unit_grid)

    def test_iteration_cap(self, unit_grid, bimodal):
        q = noisy_quotes(bimodal, 100, seed=3)
        with pytest.raises(ConvergenceError) as info:
            fit_cls(q, unit_grid, FitOptions(max_iterations=1))
        assert info.value.x is not None

    def test_scale_equivariance(self):
        g = Grid(1.0, 40)
        truth = make_kernel(KernelSpec(), g)
        q = noisy_quotes(truth, 200, seed=4)
        base = fit_cls(q, g)
        for c in (0.01, 3.0, 250.0):
            scaled = fit_cls(QuoteSet(q.strikes, c * q.prices), g)
            np.testing.assert_allclose(scaled.kernel.params, c * base.kernel.params,
                                       rtol=1e-8, atol=1e-8 * c * base.kernel.params.max())


class TestFitRme:
    def test_lambda_zero_is_cls(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 100, seed=5)
        a = fit_rme(q, uniform_prior, 0.0, unit_grid)
        b = fit_cls(q, unit_grid)
        assert l2_distance(a.kernel, b.kernel) <= 1e-6

    @pytest.mark.parametrize("lam", [1e-4, 1e-2, 1.0, 1e3])
    def test_prior_generated_data_returns_prior(self, unit_grid, bimodal, lam):
        q = noisy_quotes(bimodal, 60, sigma=0.0, seed=6)
        est = fit_rme(q, bimodal, lam, unit_grid)
        assert l2_distance(est.kernel, bimodal) <= 1e-8

    def test_large_lambda_limit(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(uniform_prior, 50, seed=7)
        cls_gap = l2_distance(fit_cls(q, unit_grid).kernel, bimodal)
        gaps = [l2_distance(fit_rme(q, bimodal, lam, unit_grid).kernel, bimodal) for lam in (1e2, 1e4, 1e6)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 1e-3 * cls_gap

    def test_objective_monotone(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 200, seed=8)
        est = fit_rme(q, uniform_prior, 1e-3, unit_grid)
        h = np.array(est.history)
        assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))
        assert est.kkt_residual <= FitOptions().kkt_tol

    def test_objective_breakdown(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 100, seed=9)
        lam = 0.01
        est = fit_rme(q, uniform_prior, lam, unit_grid)
        r = price_put(est.kernel, q.strikes) - q.prices
        assert est.mse_term == pytest.approx(np.mean(r ** 2), rel=1e-10)
        assert est.objective == pytest.approx(est.mse_term + lam * est.entropy_term, rel=1e-10)

    def test_beats_unregularized_objective(self, unit_grid, bimodal, uniform_prior):
        # the fitted point is no worse than either the prior or the CLS solution
        q = noisy_quotes(bimodal, 100, seed=10)
        lam = 1e-3
        est = fit_rme(q, uniform_prior, lam, unit_grid)
        ref = fit_cls(q, unit_grid).kernel
        for P in (uniform_prior, ref):
            r = price_put(P, q.strikes) - q.prices
            f = np.mean(r ** 2) + lam * divergence(P.params, uniform_prior.params)
            assert est.objective <= f + 1e-12

    def test_lambda_continuity(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 100, seed=11)
        lams = [1e-2, 1e-3, 1e-4, 1e-5]
        fits = [fit_rme(q, uniform_prior, lam, unit_grid).kernel for lam in lams]
        gaps = [l2_distance(fits[i], fit_rme(q, uniform_prior, lams[i] / 2, unit_grid).kernel)
                for i in range(len(lams))]
        assert gaps[-1] < gaps[0]

    def test_paper_form_runs(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 100, seed=12)
        est = fit_rme(q, uniform_prior, 0.01, unit_grid, FitOptions(entropy_form="paper"))
        assert est.kkt_residual <= 1e-8
        assert est.kernel.total_mass > 0

    def test_zero_prior_cells_warn(self, unit_grid, bimodal):
        w0 = np.full(unit_grid.M, 1.0 / unit_grid.M)
        w0[100:140] = 0.0
        prior = CumulativeKernel(unit_grid, 0.0, w0)
        q = noisy_quotes(bimodal, 100, sigma=0.0, seed=13)
        est = fit_rme(q, prior, 1e-4, unit_grid)
        assert np.all(est.kernel.increments[100:140] == 0)
        assert any(w.startswith("divergence-infinite") for w in est.warnings)

    def test_bad_lambda(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 10, seed=14)
        with pytest.raises(SpecError):
            fit_rme(q, uniform_prior, -1.0, unit_grid)

    def test_iteration_cap(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 100, seed=15)
        with pytest.raises(ConvergenceError):
            fit_rme(q, uniform_prior, 1e-3, unit_grid, FitOptions(max_iterations=1))


class TestFitMeExact:
    def test_single_constraint_returns_prior(self, unit_grid, uniform_prior):
        q = QuoteSet([1.0], [price_put(uniform_prior, 1.0)])
        est = fit_me_exact(q, uniform_prior, unit_grid)
        assert l2_distance(est.kernel, uniform_prior) <= 1e-10

    def test_two_exact_constraints(self, unit_grid, bimodal, uniform_prior):
        K = np.array([0.4, 0.8])
        q = QuoteSet(K, price_put(bimodal, K))
        est = fit_me_exact(q, uniform_prior, unit_grid)
        np.testing.assert_allclose(est.fitted_prices, q.prices, atol=1e-10)
        assert est.mse_term <= 1e-18
        assert sup_distance(est.kernel, bimodal) > 1e-2

    @pytest.mark.parametrize("form", ["generalized", "paper"])
    def test_exact_constraints_both_forms(self, unit_grid, bimodal, uniform_prior, form):
        K = np.array([0.2, 0.5, 0.9])
        q = QuoteSet(K, price_put(bimodal, K))
        est = fit_me_exact(q, uniform_prior, unit_grid, FitOptions(entropy_form=form))
        np.testing.assert_allclose(est.fitted_prices, q.prices, atol=1e-10)

    def test_decreasing_prices_infeasible(self, unit_grid, uniform_prior):
        q = QuoteSet([0.3, 0.6], [0.2, 0.1])
        assert fit_cls(q, unit_grid).objective > 0
        with pytest.raises(InfeasibleError):
            fit_me_exact(q, uniform_prior, unit_grid)

    def test_noisy_quotes_infeasible(self, unit_grid, bimodal, uniform_prior):
        q = noisy_quotes(bimodal, 20, sigma=0.05, seed=16)
        with pytest.raises(InfeasibleError):
            fit_me_exact(q, uniform_prior, unit_grid)


class TestLambdaSchedule:
    @pytest.mark.parametrize("N, expected", [(1, 0.1), (100, 0.01), (400, 0.005)])
    def test_values(self, N, expected):
        assert lambda_schedule(N) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("args", [(0, 0.1, 0.5), (10, 0.0, 0.5), (10, 0.1, -1.0)])
    def test_bad_args(self, args):
        with pytest.raises(SpecError):
            lambda_schedule(*args)


class TestDivergence:
    def test_zero_at_prior(self):
        w0 = np.array([0.1, 0.2, 0.3])
        assert divergence(w0, w0) == pytest.approx(0.0, abs=1e-12)

    def test_zero_prior_cell(self):
        assert divergence([0.1, 0.0], [0.1, 0.0]) == pytest.approx(0.0, abs=1e-15)
        assert divergence([0.1, 0.1], [0.1, 0.0]) == np.inf

    def test_paper_form_unbounded_below(self):
        w0 = np.full(4, 0.25)
        assert divergence(w0 * 0.3, w0, "paper") < 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(1e-6, 10)), min_size=1, max_size=30))
def test_generalized_divergence_nonnegative(pairs):
    w, w0 = map(np.array, zip(*pairs))
    d = divergence(w, w0)
    assert d >= -1e-12 * max(1.0, w.sum() + w0.sum())
    if np.allclose(w, w0, rtol=0, atol=0):
        assert abs(d) <= 1e-12
