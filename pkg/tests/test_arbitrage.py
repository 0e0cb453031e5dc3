"""Static-arbitrage checks: stencils vs analytic derivatives, constructed
violations, penalty equivalence, and the differentiable training chain."""

import numpy as np
import pytest

from volcraft import arbitrage, datagen, surfaces, vaemodel
from volcraft.errors import CoverageError, DomainError, ResolutionError

from test_vaemodel import small_corpus, small_model  # noqa: F401  (session fixtures)


def flat_grid(c=0.2, n_t=12, n_x=15):
    t = np.linspace(0.1, 3.0, n_t)
    x = np.linspace(-0.4, 0.4, n_x)
    w = np.tile((t * c**2)[:, None], (1, n_x))
    return arbitrage.TotalVarianceGrid(x, t, w)


class TestStencils:
    def test_first_derivative_exact_on_linear(self):
        x = np.array([0.0, 0.7, 1.1, 2.0, 3.5])
        mat = arbitrage.derivative_matrix(x)
        np.testing.assert_allclose(mat @ (2.0 * x + 1.0), 2.0, atol=1e-12)

    def test_first_derivative_on_quadratic_matches_analytic(self):
        # t^2 -> 2t; 3-point stencils are exact on quadratics
        t = np.linspace(0.2, 2.0, 9)
        mat = arbitrage.derivative_matrix(t)
        np.testing.assert_allclose(mat @ t**2, 2.0 * t, atol=1e-10)

    def test_second_derivative_quadratic_exact(self):
        x = np.linspace(-1.0, 1.0, 11)
        mat = arbitrage.second_derivative_matrix(x)
        np.testing.assert_allclose(mat @ (0.04 + 0.01 * x**2), 0.02, atol=1e-12)

    def test_second_order_convergence_on_smooth_function(self):
        # halving the spacing cuts the max interior error ~4x
        errors = []
        for n in (21, 41, 81):
            x = np.linspace(0.3, 2.7, n)
            d1 = arbitrage.derivative_matrix(x)
            err = np.abs(d1 @ np.sin(x) - np.cos(x))[1:-1].max()
            errors.append(err)
        assert errors[0] / errors[1] > 3.4
        assert errors[1] / errors[2] > 3.4

    def test_too_few_nodes_rejected(self):
        with pytest.raises(ResolutionError):
            arbitrage.derivative_matrix(np.array([0.0, 1.0]))


class TestCalendarCheck:
    def test_flat_vol_surface_clean(self):
        assert arbitrage.calendar_check(flat_grid()) == []

    def test_constructed_violation_flagged_everywhere(self):
        t = np.linspace(0.1, 2.9, 10)
        x = np.linspace(-0.3, 0.3, 7)
        w = np.tile(((3.0 - t) * 0.04)[:, None], (1, len(x)))
        grid = arbitrage.TotalVarianceGrid(x, t, w)
        violations = arbitrage.calendar_check(grid)
        assert len(violations) == w.size  # decreasing everywhere, incl. edges

    def test_needs_three_maturities(self):
        t = np.array([0.5, 1.0])
        grid = arbitrage.TotalVarianceGrid(np.linspace(-1, 1, 5), t, np.ones((2, 5)))
        with pytest.raises(ResolutionError):
            arbitrage.calendar_check(grid)


class TestButterflyCheck:
    def test_constant_w_gives_g_of_one(self):
        grid = flat_grid()
        violations, g = arbitrage.butterfly_check(grid)
        assert violations == []
        np.testing.assert_allclose(g, 1.0, atol=1e-10)

    def test_flat_g_invariant_under_x_origin_shift(self):
        t = np.linspace(0.1, 3.0, 6)
        for shift in (0.0, 0.7, -1.3):
            x = np.linspace(-0.4, 0.4, 9) + shift
            w = np.tile((t * 0.04)[:, None], (1, 9))
            _, g = arbitrage.butterfly_check(arbitrage.TotalVarianceGrid(x, t, w))
            np.testing.assert_allclose(g, 1.0, atol=1e-10)

    def test_steep_linear_slice_flagged(self):
        # w = a + b X with small a and steep b: the (w'/4)(1/w + 1/4) term
        # dominates near the money and drives g negative
        t = np.linspace(0.5, 1.5, 5)
        x = np.linspace(-0.15, 0.15, 21)
        a, b = 0.1, 0.6
        w = np.tile(a + b * x, (len(t), 1))
        grid = arbitrage.TotalVarianceGrid(x, t, w)
        violations, g = arbitrage.butterfly_check(grid)
        assert violations

        # independent evaluation of the same closed form at the worst node
        def g_closed(xv, wv):
            return (1 - xv * b / (2 * wv)) ** 2 - (b / 4) * (1 / wv + 0.25)

        worst_x = max(violations, key=lambda v: v[2])[0]
        assert g_closed(worst_x, a + b * worst_x) < 0
        assert g_closed(0.0, a) == pytest.approx(1 - (b / 4) * (1 / a + 0.25), abs=1e-15)

    def test_needs_five_x_nodes(self):
        grid = arbitrage.TotalVarianceGrid(
            np.linspace(-1, 1, 4), np.linspace(0.5, 1.5, 4), np.ones((4, 4))
        )
        with pytest.raises(ResolutionError):
            arbitrage.butterfly_check(grid)

    def test_zero_variance_nodes_excluded_and_reported(self):
        t = np.linspace(0.5, 1.5, 5)
        x = np.linspace(-0.5, 0.5, 7)
        w = np.tile(0.04 + 0.0 * x, (len(t), 1))
        w[2, 3] = 0.0
        grid = arbitrage.TotalVarianceGrid(x, t, w)
        _, g = arbitrage.butterfly_check(grid)
        assert np.isnan(g[2, 3])
        report = arbitrage.evaluate_grid(grid)
        assert report.n_excluded == 1


class TestPenaltyLosses:
    def test_clean_grid_gives_zero(self):
        assert arbitrage.penalty_losses(flat_grid()) == (0.0, 0.0)

    def test_single_deficit_node_definition(self):
        # dw/dt = -0.1 along one x column: L_cal = n_bad * 0.01 / node_count
        t = np.array([1.0, 2.0, 3.0])
        x = np.linspace(-0.3, 0.3, 5)
        w = np.tile(0.04 * t[:, None], (1, 5))
        w[:, 2] = 0.5 - 0.1 * t  # stays positive, slope exactly -0.1
        grid = arbitrage.TotalVarianceGrid(x, t, w)
        l_cal, _ = arbitrage.penalty_losses(grid)
        assert l_cal == pytest.approx(3 * 0.1**2 / w.size, rel=1e-4)

    def test_butterfly_penalty_matches_bruteforce(self):
        t = np.linspace(0.5, 1.5, 5)
        x = np.linspace(-0.15, 0.15, 21)
        w = np.tile(0.1 + 0.6 * x, (len(t), 1))
        grid = arbitrage.TotalVarianceGrid(x, t, w)
        _, l_but = arbitrage.penalty_losses(grid)
        _, g = arbitrage.butterfly_check(grid, tol=0.0)
        brute = np.sum(np.maximum(0.0, -g - arbitrage.DEFAULT_TOL) ** 2) / g.size
        assert l_but == pytest.approx(brute, rel=1e-12)
        assert l_but > 0

    def test_zero_iff_report_clean(self):
        rng = np.random.default_rng(61)
        for _ in range(20):
            t = np.sort(rng.uniform(0.1, 3.0, 6))
            x = np.sort(rng.uniform(-0.5, 0.5, 8))
            w = 0.02 + 0.05 * np.abs(rng.standard_normal((6, 8)))
            try:
                grid = arbitrage.TotalVarianceGrid(x, t, w)
            except DomainError:
                continue
            l_cal, l_but = arbitrage.penalty_losses(grid)
            report = arbitrage.evaluate_grid(grid)
            assert (l_cal == 0.0) == (not report.calendar_violations)
            assert (l_but == 0.0) == (not report.butterfly_violations)


class TestToTotalVariance:
    def test_flat_decoder_gives_w_t_c_squared(self, small_model):
        # force a constant decoder: zero weights, softplus(bias) = c
        model = vaemodel.model_from_dict(vaemodel.model_to_dict(small_model))
        for layer in model.decoder.layers:
            layer.weights[:] = 0.0
            layer.biases[:] = 0.0
        c = float(np.log1p(np.exp(0.0)))
        grid = arbitrage.to_total_variance(model, np.zeros(model.latent_dim), 25)
        expected = grid.maturities[:, None] * c**2
        np.testing.assert_allclose(grid.w, np.tile(expected, (1, 25)), rtol=1e-9)
        assert np.all(grid.w >= 0)

    def test_atm_log_moneyness_identity(self):
        # X at delta 0.5 is sigma^2 t / 2 under the forward-delta convention
        x = arbitrage.log_moneyness_from_vol(0.5, 2.0, 0.3)
        assert x == pytest.approx(0.3**2 * 2.0 / 2.0, abs=1e-14)

    def test_resolution_floor(self, small_model):
        with pytest.raises(ResolutionError):
            arbitrage.to_total_variance(small_model, np.zeros(small_model.latent_dim), 10)

    def test_trained_decode_is_mostly_clean(self, small_model):
        grid = arbitrage.to_total_variance(small_model, np.zeros(small_model.latent_dim))
        report = arbitrage.evaluate_grid(grid)
        assert report.min_g == report.min_g  # finite (not NaN-only)

    def test_surface_route(self, small_corpus):
        grid = arbitrage.surface_to_total_variance(small_corpus.train[0])
        assert grid.w.shape == (8, 41)
        report = arbitrage.evaluate_grid(grid)
        assert report.passes  # generated corpus is arbitrage-screened


class TestPenaltyChain:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(62)
        t_axis = np.exp(np.linspace(np.log(0.1), np.log(2.0), 7))
        d_axis = np.linspace(0.1, 0.9, 7)
        # vols decaying faster than 1/sqrt(t) violate calendar; the bump
        # breaks butterfly, so both penalty branches carry gradient
        sigma = 0.22 / t_axis[:, None] ** 0.55 + 0.1 * (d_axis[None, :] - 0.5) ** 2
        sigma[3, 3] += 0.08
        ops = arbitrage.penalty_operators(sigma, t_axis, d_axis)
        l_cal, l_but, g_cal, g_but = arbitrage.penalty_apply(sigma, ops)
        assert l_cal > 0 or l_but > 0  # the stress case must bite
        h = 1e-7
        for idx in rng.choice(sigma.size, size=12, replace=False):
            pert = sigma.copy().reshape(-1)
            pert[idx] += h
            up = arbitrage.penalty_apply(pert.reshape(7, 7), ops)
            pert[idx] -= 2 * h
            dn = arbitrage.penalty_apply(pert.reshape(7, 7), ops)
            fd_cal = (up[0] - dn[0]) / (2 * h)
            fd_but = (up[1] - dn[1]) / (2 * h)
            np.testing.assert_allclose(g_cal.reshape(-1)[idx], fd_cal, rtol=2e-4, atol=1e-10)
            np.testing.assert_allclose(g_but.reshape(-1)[idx], fd_but, rtol=2e-4, atol=1e-10)

    def test_band_too_narrow_raises_coverage(self):
        t_axis = np.array([0.01, 1.0, 3.0])
        d_axis = np.linspace(0.1, 0.9, 5)
        # tiny vol at short maturity -> X band collapses near zero while the
        # long end sits far away
        sigma = np.tile(np.array([[0.011], [1.9], [1.9]]), (1, 5))
        with pytest.raises(CoverageError) as info:
            arbitrage.penalty_operators(sigma, t_axis, d_axis)
        assert info.value.band is not None
