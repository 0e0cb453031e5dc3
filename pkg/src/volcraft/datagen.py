"""Synthetic multi-asset surface corpus so every experiment runs without
proprietary vendor data.

Each asset evolves four smile drivers (level, skew, convexity, term slope)
as mean-reverting random walks reflected into documented ranges. A day's
surface is a total-variance smile family in log-moneyness (an SVI-style
slice per maturity), mapped onto the delta grid through the delta/strike
fixed point and screened with the static-arbitrage checks; failing days are
re-drawn. The final stretch of days gets a level/convexity shock so the
corpus carries a crisis regime, and the chronological tail is held out as
validation.
"""

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from volcraft import arbitrage
from volcraft.errors import DomainError, GenerationError
from volcraft.surfaces import GridSpec, VolSurface

VALIDATION_FRACTION = 0.15
CRISIS_FRACTION = 0.10
VOL_RANGE = (0.01, 1.5)  # generated vols must land inside; violators re-drawn
START_DATE = _dt.date(2019, 1, 1)


@dataclass
class ParamPathSpec:
    """Mean-reverting random walk reflected into [lo, hi]."""

    level: float
    speed: float
    step_vol: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError("need lo < hi")
        if not self.lo <= self.level <= self.hi:
            raise DomainError("level must sit inside [lo, hi]")


@dataclass
class SyntheticAssetSpec:
    asset_id: str
    n_days: int
    seed: int
    base_vol: ParamPathSpec = field(
        default_factory=lambda: ParamPathSpec(0.10, 0.04, 0.005, 0.04, 0.40)
    )
    skew: ParamPathSpec = field(
        default_factory=lambda: ParamPathSpec(-0.25, 0.03, 0.02, -0.75, 0.75)
    )
    convexity: ParamPathSpec = field(
        default_factory=lambda: ParamPathSpec(1.0, 0.03, 0.05, 0.2, 3.0)
    )
    term_slope: ParamPathSpec = field(
        default_factory=lambda: ParamPathSpec(0.10, 0.03, 0.01, -0.30, 0.45)
    )
    crisis_level_shock: float = 0.4
    crisis_convexity_shock: float = 0.3

    def __post_init__(self):
        if self.n_days <= 0:
            raise DomainError("n_days must be positive")


@dataclass
class CorpusSplit:
    train: list
    validation: list


def default_asset_specs(n_assets=5, n_days=400, seed=2024):
    """Per-asset variations around FX-ish smile regimes."""
    levels = [0.08, 0.10, 0.12, 0.09, 0.16]
    skews = [-0.30, -0.15, 0.10, -0.40, 0.25]
    specs = []
    for i in range(n_assets):
        j = i % len(levels)
        specs.append(
            SyntheticAssetSpec(
                asset_id=f"FX{i + 1}",
                n_days=n_days,
                seed=seed + 7919 * i,
                base_vol=ParamPathSpec(levels[j], 0.04, 0.005, 0.04, 0.40),
                skew=ParamPathSpec(skews[j], 0.03, 0.02, -0.75, 0.75),
            )
        )
    return specs


def _reflect(x, lo, hi):
    # one reflection is enough for the small steps used here
    if x < lo:
        x = lo + (lo - x)
    if x > hi:
        x = hi - (x - hi)
    return min(max(x, lo), hi)


def _step(value, spec, rng, target=None, turbulence=1.0, speed=None):
    target = spec.level if target is None else target
    speed = spec.speed if speed is None else speed
    nxt = (
        value
        + speed * (target - value)
        + spec.step_vol * turbulence * rng.standard_normal()
    )
    return _reflect(nxt, spec.lo, spec.hi)


def _smile_family(base, skew, convexity, term_slope):
    """Day parameters -> callable w(X, t), an SVI-style slice per maturity.

    atm(t) = base * (1 + term_slope (sqrt(t) - 1)); the slice slope scales
    with t * atm^2 so total variance grows in maturity, keeping calendar
    spreads clean for ordinary parameter draws.
    """

    def atm(t):
        return np.maximum(base * (1.0 + term_slope * (np.sqrt(t) - 1.0)), 0.02)

    width = 0.5 * base

    def w(x, t):
        a_t = np.asarray(atm(t))
        b_t = convexity * t * a_t**2
        anchor = a_t**2 * t - b_t * width
        return anchor + b_t * (skew * x + np.sqrt(x * x + width * width))

    return w


def _screen_family(w_fn, grid):
    t_axis = np.exp(np.linspace(np.log(grid.maturities[0]), np.log(grid.maturities[-1]), 21))
    # band wide enough for the outermost grid deltas at 1.5x the ATM vol
    t_max = t_axis[-1]
    hi_vol = 1.5 * np.sqrt(float(w_fn(0.0, t_max)) / t_max)
    x_max = 1.1 * (1.2816 * hi_vol * np.sqrt(t_max) + 0.5 * hi_vol**2 * t_max)
    x_axis = np.linspace(-x_max, x_max, 41)
    w = np.array([w_fn(x_axis, t) for t in t_axis])
    if np.any(w <= 0):
        return False
    tv = arbitrage.TotalVarianceGrid(x_axis, t_axis, w)
    if arbitrage.calendar_check(tv):
        return False
    violations, _ = arbitrage.butterfly_check(tv)
    return not violations


def _family_to_grid(w_fn, grid, tol=1e-10, max_iter=50):
    """Map the smile family onto the delta grid via the delta/strike fixed
    point (X depends on the vol, the vol on X)."""
    vols = np.empty((len(grid.maturities), len(grid.deltas)))
    nd = ndtri(grid.deltas)
    for i, t in enumerate(grid.maturities):
        sigma = np.sqrt(np.maximum(w_fn(0.0, t), 1e-8) / t) * np.ones(len(grid.deltas))
        for _ in range(max_iter):
            srt = sigma * np.sqrt(t)
            x = -srt * nd + 0.5 * srt * srt
            new_sigma = np.sqrt(np.maximum(w_fn(x, t), 1e-10) / t)
            if np.max(np.abs(new_sigma - sigma)) < tol:
                sigma = new_sigma
                break
            sigma = new_sigma
        vols[i] = sigma
    return vols


def _generate_asset(spec, grid, max_retries=10):
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n_crisis = int(round(CRISIS_FRACTION * spec.n_days))
    crisis_start = spec.n_days - n_crisis
    base = spec.base_vol.level
    skew = spec.skew.level
    conv = spec.convexity.level
    slope = spec.term_slope.level
    out = []
    for day in range(spec.n_days):
        in_crisis = day >= crisis_start
        # crises reprice fast: boosted reversion speed and turbulence
        turbulence = 2.0 if in_crisis else 1.0
        speed = max(spec.base_vol.speed, 0.2) if in_crisis else None
        base_target = spec.base_vol.level * (
            1.0 + (spec.crisis_level_shock if in_crisis else 0.0)
        )
        conv_target = spec.convexity.level * (
            1.0 + (spec.crisis_convexity_shock if in_crisis else 0.0)
        )
        for attempt in range(max_retries + 1):
            trial_base = _step(base, spec.base_vol, rng, base_target, turbulence, speed)
            trial_skew = _step(skew, spec.skew, rng, None, turbulence)
            trial_conv = _step(conv, spec.convexity, rng, conv_target, turbulence, speed)
            trial_slope = _step(slope, spec.term_slope, rng, None, turbulence)
            w_fn = _smile_family(trial_base, trial_skew, trial_conv, trial_slope)
            if not _screen_family(w_fn, grid):
                continue
            vols = _family_to_grid(w_fn, grid)
            if np.any(vols < VOL_RANGE[0]) or np.any(vols > VOL_RANGE[1]):
                continue
            break
        else:
            raise GenerationError(
                f"asset {spec.asset_id}: day {day} failed arbitrage screening "
                f"{max_retries + 1} times",
                asset_id=spec.asset_id,
            )
        base, skew, conv, slope = trial_base, trial_skew, trial_conv, trial_slope
        date = START_DATE + _dt.timedelta(days=day)
        out.append(VolSurface(spec.asset_id, date, vols, grid))
    return out


def generate_corpus(specs, grid=None, validation_fraction=VALIDATION_FRACTION):
    """Surfaces for every asset spec plus the chronological train/validation
    split (last ``validation_fraction`` of each asset's days held out)."""
    if not specs:
        raise DomainError("need at least one asset spec")
    grid = grid or GridSpec.default()
    train, validation = [], []
    for spec in specs:
        surfaces_ = _generate_asset(spec, grid)
        n_val = max(1, int(round(validation_fraction * len(surfaces_))))
        train.extend(surfaces_[:-n_val])
        validation.extend(surfaces_[-n_val:])
    return CorpusSplit(train=train, validation=validation)
