"""Synthetic corpus generator: counts, splits, screening, determinism."""

import numpy as np
import pytest

from volcraft import arbitrage, datagen, surfaces
from volcraft.errors import DomainError, GenerationError


@pytest.fixture(scope="module")
def split():
    specs = datagen.default_asset_specs(n_assets=2, n_days=100, seed=3)
    return datagen.generate_corpus(specs)


class TestGeneration:
    def test_counts_and_split_fractions(self):
        specs = datagen.default_asset_specs(n_assets=2, n_days=40, seed=1)
        split = datagen.generate_corpus(specs)
        assert len(split.train) + len(split.validation) == 80
        assert len(split.validation) == 2 * 6  # round(0.15 * 40) per asset

    def test_validation_strictly_after_training_per_asset(self, split):
        for asset in {s.asset_id for s in split.train}:
            last_train = max(
                s.observation_date for s in split.train if s.asset_id == asset
            )
            first_val = min(
                s.observation_date for s in split.validation if s.asset_id == asset
            )
            assert first_val > last_train

    def test_vols_inside_documented_range(self, split):
        for surf in split.train + split.validation:
            assert np.all(surf.vols >= datagen.VOL_RANGE[0])
            assert np.all(surf.vols <= datagen.VOL_RANGE[1])

    def test_surfaces_pass_arbitrage_checks(self, split):
        rng = np.random.default_rng(0)
        sample = rng.choice(len(split.train), size=12, replace=False)
        for idx in sample:
            grid = arbitrage.surface_to_total_variance(split.train[idx])
            report = arbitrage.evaluate_grid(grid)
            assert report.passes

    def test_same_seed_identical_corpus(self):
        specs = datagen.default_asset_specs(n_assets=1, n_days=30, seed=9)
        a = datagen.generate_corpus(specs)
        b = datagen.generate_corpus(
            datagen.default_asset_specs(n_assets=1, n_days=30, seed=9)
        )
        for sa, sb in zip(a.train + a.validation, b.train + b.validation):
            np.testing.assert_array_equal(sa.vols, sb.vols)
            assert sa.observation_date == sb.observation_date

    def test_crisis_window_lifts_levels(self, split):
        by_asset = {}
        for surf in split.train + split.validation:
            by_asset.setdefault(surf.asset_id, []).append(surf)
        for asset, surfs in by_asset.items():
            surfs.sort(key=lambda s: s.observation_date)
            calm = np.mean([s.vols.mean() for s in surfs[:60]])
            crisis = np.mean([s.vols.mean() for s in surfs[-5:]])
            assert crisis > calm

    def test_empty_specs_rejected(self):
        with pytest.raises(DomainError):
            datagen.generate_corpus([])

    def test_impossible_spec_raises_generation_error(self):
        spec = datagen.SyntheticAssetSpec(
            asset_id="BAD", n_days=3, seed=0,
            base_vol=datagen.ParamPathSpec(0.39, 0.0, 0.0001, 0.38, 0.40),
            convexity=datagen.ParamPathSpec(2.99, 0.0, 0.0001, 2.9, 3.0),
            skew=datagen.ParamPathSpec(0.74, 0.0, 0.0001, 0.7, 0.75),
        )
        with pytest.raises(GenerationError) as info:
            datagen.generate_corpus([spec])
        assert info.value.asset_id == "BAD"

    def test_default_grid_used(self, split):
        assert split.train[0].grid.matches(surfaces.GridSpec.default())


class TestParamPath:
    def test_reflection_keeps_range(self):
        spec = datagen.ParamPathSpec(0.1, 0.05, 0.05, 0.05, 0.2)
        rng = np.random.default_rng(4)
        value = 0.1
        for _ in range(500):
            value = datagen._step(value, spec, rng)
            assert spec.lo <= value <= spec.hi

    def test_invalid_range_rejected(self):
        with pytest.raises(DomainError):
            datagen.ParamPathSpec(0.5, 0.1, 0.1, 0.6, 0.4)
