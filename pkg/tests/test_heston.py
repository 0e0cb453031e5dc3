"""Heston pricer against independent oracles and the calibrator's recovery
properties. The full 10^6-path Monte Carlo cross-check lives in the
acceptance suite; unit tests use lighter path counts."""

import math

import numpy as np
import pytest

from volcraft import heston, surfaces
from volcraft.errors import DomainError

from helpers import heston_mc_call

BASE = heston.HestonParams(kappa=2.0, theta=0.04, sigma_v=0.5, rho=-0.7, v0=0.04)
GRID = surfaces.GridSpec.default()


class TestPricer:
    def test_degenerate_vol_of_vol_reduces_to_black_scholes(self):
        params = heston.HestonParams(kappa=2.0, theta=0.04, sigma_v=1e-6, rho=0.0, v0=0.04)
        price = heston.heston_call_price(params, 100.0, 100.0, 1.0)
        bs = surfaces.bs_call_price(100.0, 100.0, 0.0, 1.0, 0.2)
        assert abs(price - bs) < 1e-5

    def test_put_call_parity(self):
        for strike in (80.0, 100.0, 125.0):
            c = heston.heston_call_price(BASE, 100.0, strike, 1.0)
            p = heston.heston_put_price(BASE, 100.0, strike, 1.0)
            assert abs(c - p - (100.0 - strike)) < 1e-9

    def test_parity_with_rates(self):
        params = heston.HestonParams(2.0, 0.04, 0.5, -0.7, 0.04, rate=0.03)
        c = heston.heston_call_price(params, 100.0, 95.0, 2.0)
        p = heston.heston_put_price(params, 100.0, 95.0, 2.0)
        assert abs(c - p - (100.0 - 95.0 * math.exp(-0.03 * 2.0))) < 1e-9

    def test_matches_monte_carlo(self):
        price = heston.heston_call_price(BASE, 100.0, 100.0, 1.0)
        mc, se = heston_mc_call(BASE, 100.0, 100.0, 1.0, n_paths=200_000, n_steps=400)
        assert abs(price - mc) < 3 * se + 0.02  # small Euler-bias allowance

    def test_monotone_in_v0_and_theta(self):
        rng = np.random.default_rng(71)
        for _ in range(20):
            kappa = rng.uniform(0.5, 4.0)
            theta = rng.uniform(0.01, 0.2)
            sv = rng.uniform(0.1, 0.8)
            rho = rng.uniform(-0.9, 0.5)
            v0 = rng.uniform(0.01, 0.2)
            base = heston.heston_call_price(
                heston.HestonParams(kappa, theta, sv, rho, v0), 100.0, 105.0, 1.0, check=False
            )
            up_v0 = heston.heston_call_price(
                heston.HestonParams(kappa, theta, sv, rho, v0 * 1.2), 100.0, 105.0, 1.0,
                check=False,
            )
            up_theta = heston.heston_call_price(
                heston.HestonParams(kappa, theta * 1.2, sv, rho, v0), 100.0, 105.0, 1.0,
                check=False,
            )
            assert up_v0 > base
            assert up_theta > base

    def test_quadrature_stability_long_maturity(self):
        # would fail with the wrong complex-log branch
        price = heston.heston_call_price(BASE, 100.0, 90.0, 10.0)
        refined = heston._call_prices(BASE, 100.0, [90.0], 10.0, 512, 800.0)[0]
        assert abs(price - refined) < 1e-6

    def test_domain_checks(self):
        with pytest.raises(DomainError):
            heston.HestonParams(kappa=-1.0, theta=0.04, sigma_v=0.5, rho=0.0, v0=0.04)
        with pytest.raises(DomainError):
            heston.HestonParams(kappa=1.0, theta=0.04, sigma_v=0.5, rho=1.0, v0=0.04)
        with pytest.raises(DomainError):
            heston.heston_call_price(BASE, -1.0, 100.0, 1.0)

    def test_feller_ratio_reported(self):
        assert BASE.feller_ratio == pytest.approx(2 * 2.0 * 0.04 / 0.25)


class TestHestonSurface:
    def test_flat_limit(self):
        params = heston.HestonParams(kappa=2.0, theta=0.04, sigma_v=1e-6, rho=0.0, v0=0.04)
        surf = heston.heston_surface(params, GRID)
        np.testing.assert_allclose(surf.vols, 0.2, atol=1e-4)

    def test_positive_and_finite_for_random_params(self):
        rng = np.random.default_rng(72)
        for _ in range(3):
            params = heston.HestonParams(
                kappa=rng.uniform(0.5, 3.0), theta=rng.uniform(0.02, 0.1),
                sigma_v=rng.uniform(0.2, 0.6), rho=rng.uniform(-0.8, 0.0),
                v0=rng.uniform(0.02, 0.1),
            )
            surf = heston.heston_surface(params, GRID)
            assert np.all(surf.vols > 0) and np.isfinite(surf.vols).all()

    def test_negative_rho_skews_low_strike_wing_up(self):
        # delta 0.75 sits at low strikes: negative spot/vol correlation
        # raises its vol above the high-strike 0.25-delta wing
        surf = heston.heston_surface(BASE, GRID)
        row = surf.vols[6]  # T = 1y
        d25 = row[list(GRID.deltas).index(0.25)]
        d75 = row[list(GRID.deltas).index(0.75)]
        assert d75 > d25

    def test_smile_shape_matches_monte_carlo(self):
        # same ordering must come out of the simulation-based smile
        t = 1.0
        strikes = [85.0, 115.0]
        vols = []
        for k in strikes:
            mc, _ = heston_mc_call(BASE, 100.0, k, t, n_paths=400_000, n_steps=400)
            vols.append(surfaces.implied_vol(mc, 100.0, k, 0.0, t))
        assert vols[0] > vols[1]  # low strike above high strike for rho < 0


class TestCalibration:
    def make_observations(self, params, grid=GRID):
        surf = heston.heston_surface(params, grid)
        coords = grid.coordinates()
        vols = surfaces.flatten(surf)
        return [surfaces.Observation(t, d, v) for (t, d), v in zip(coords, vols)]

    def test_self_consistency_on_heston_data(self):
        obs = self.make_observations(BASE)
        fitted, objective = heston.heston_calibrate(obs, n_starts=3, seed=1)
        assert objective < 1e-8

    def test_flat_bs_surface_recovery(self):
        vols = np.full((8, 5), 0.1)
        surf = surfaces.VolSurface("flat", None, vols, GRID)
        coords = GRID.coordinates()
        obs = [
            surfaces.Observation(t, d, v)
            for (t, d), v in zip(coords, surfaces.flatten(surf))
        ]
        fitted, _ = heston.heston_calibrate(obs, n_starts=3, seed=2)
        refit = heston.heston_surface(fitted, GRID)
        assert calibration_mae(refit.vols, vols) < 5.0  # bps

    def test_needs_five_observations(self):
        obs = self.make_observations(BASE)[:4]
        with pytest.raises(DomainError):
            heston.heston_calibrate(obs)

    def test_roundtrip_reproduces_observed_vols_within_1bp(self):
        obs = self.make_observations(BASE)
        fitted, _ = heston.heston_calibrate(obs, n_starts=3, seed=3)
        surf = heston.heston_surface(fitted, GRID)
        original = heston.heston_surface(BASE, GRID)
        assert np.max(np.abs(surf.vols - original.vols)) * 1e4 < 1.0


def calibration_mae(a, b):
    return float(np.mean(np.abs(np.asarray(a) - np.asarray(b))) * 1e4)
