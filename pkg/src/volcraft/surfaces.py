"""Implied-volatility surfaces on a fixed FX delta/maturity grid, plus the
Black-Scholes machinery and FX quote-convention conversion they rest on.

Conventions fixed here and used everywhere else:

* Moneyness axis is forward call delta N(d1), no premium adjustment, with
  d1 = (ln(F/K) + vol^2 T / 2) / (vol sqrt(T)). FX desks differ on this;
  forward delta avoids rate-dependent circularity in the delta->strike map.
* Vols are decimal per-annum (0.10 = 10%).
* Flattening is maturity-major: index = i_maturity * n_deltas + i_delta.
* Tenor year-fractions for the default grid: 1w = 7/365, months are 30/365
  multiples, 1y = 1, 3y = 3.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from volcraft.errors import (
    DomainError,
    GridMismatchError,
    InvalidQuoteError,
    InversionError,
    ShapeError,
)

_DAY = 1.0 / 365.0

DEFAULT_MATURITIES = (7 * _DAY, 30 * _DAY, 60 * _DAY, 90 * _DAY, 180 * _DAY, 270 * _DAY, 1.0, 3.0)
DEFAULT_DELTAS = (0.1, 0.25, 0.5, 0.75, 0.9)


@dataclass
class GridSpec:
    """The fixed delta x maturity lattice a surface is sampled on."""

    maturities: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        self.maturities = np.asarray(self.maturities, dtype=np.float64)
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.maturities.ndim != 1 or self.deltas.ndim != 1:
            raise ShapeError("grid axes must be 1-D")
        if len(self.maturities) == 0 or len(self.deltas) == 0:
            raise ShapeError("grid axes must be non-empty")
        if np.any(np.diff(self.maturities) <= 0) or np.any(self.maturities <= 0):
            raise DomainError("maturities must be strictly increasing and positive")
        if np.any(np.diff(self.deltas) <= 0) or np.any(self.deltas <= 0) or np.any(self.deltas >= 1):
            raise DomainError("deltas must be strictly increasing, inside (0, 1)")

    @classmethod
    def default(cls):
        return cls(np.array(DEFAULT_MATURITIES), np.array(DEFAULT_DELTAS))

    @property
    def n_points(self):
        return len(self.maturities) * len(self.deltas)

    def coordinates(self):
        """(n_points, 2) array of (maturity, delta) pairs in flatten order."""
        t, d = np.meshgrid(self.maturities, self.deltas, indexing="ij")
        return np.column_stack([t.ravel(), d.ravel()])

    def matches(self, other):
        return np.array_equal(self.maturities, other.maturities) and np.array_equal(
            self.deltas, other.deltas
        )


@dataclass
class VolSurface:
    """One asset-date observation: implied vols on the grid lattice."""

    asset_id: str
    observation_date: object  # datetime.date
    vols: np.ndarray  # (n_maturities, n_deltas)
    grid: GridSpec

    def __post_init__(self):
        self.vols = np.asarray(self.vols, dtype=np.float64)
        expected = (len(self.grid.maturities), len(self.grid.deltas))
        if self.vols.shape != expected:
            raise ShapeError(f"vols shape {self.vols.shape} != grid shape {expected}")
        if not np.isfinite(self.vols).all() or np.any(self.vols <= 0):
            raise DomainError("vols must be positive and finite")


@dataclass
class MarketQuoteRow:
    """ATM/risk-reversal/butterfly quotes for one tenor, decimal vols."""

    tenor: float
    atm: float
    rr25: float
    bf25: float
    rr10: float
    bf10: float
    forward: float
    domestic_rate: float
    foreign_rate: float

    def __post_init__(self):
        if self.tenor <= 0:
            raise DomainError("tenor must be positive")
        if self.atm <= 0:
            raise DomainError("atm vol must be positive")


@dataclass
class Observation:
    """A single observed vol; coordinates need not lie on the grid."""

    maturity: float
    delta: float
    vol: float

    def __post_init__(self):
        if self.maturity <= 0:
            raise DomainError("maturity must be positive")
        if not 0 < self.delta < 1:
            raise DomainError("delta must be inside (0, 1)")
        if self.vol <= 0:
            raise DomainError("vol must be positive")


# --- Black-Scholes -------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def _phi(x):
    """Standard normal CDF via erf (exact enough for float64 throughout)."""
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


def bs_call_price(spot, strike, rate, maturity, vol):
    """Black-Scholes European call price.

    Parameters
    ----------
    spot, strike : float
        Spot > 0, strike >= 0.
    rate : float
        Continuously compounded, acts on the strike leg only.
    maturity : float
        Year fraction, > 0.
    vol : float
        Decimal implied vol, >= 0; vol = 0 returns discounted intrinsic.
    """
    if spot <= 0 or strike < 0 or maturity <= 0 or vol < 0:
        raise DomainError(
            f"bs_call_price domain: spot={spot}, strike={strike}, T={maturity}, vol={vol}"
        )
    df = math.exp(-rate * maturity)
    if strike == 0.0:
        return spot
    if vol == 0.0:
        return max(spot - strike * df, 0.0)
    srt = vol * math.sqrt(maturity)
    d1 = (math.log(spot / strike) + rate * maturity) / srt + 0.5 * srt
    d2 = d1 - srt
    price = spot * _phi(d1) - strike * df * _phi(d2)
    # round-off in the tails can leave the band; the contract pins it inside
    return min(max(price, max(spot - strike * df, 0.0)), spot)


def bs_vega(spot, strike, rate, maturity, vol):
    """dPrice/dVol of the Black-Scholes call."""
    if vol <= 0 or strike == 0:
        return 0.0
    srt = vol * math.sqrt(maturity)
    d1 = (math.log(spot / strike) + rate * maturity) / srt + 0.5 * srt
    return spot * math.sqrt(maturity) * math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)


_PRICE_TOL = 1e-10


def implied_vol(price, spot, strike, rate, maturity):
    """Invert ``bs_call_price`` in vol.

    Bracketed bisection seeded by the Brenner-Subrahmanyam approximation,
    finished with Newton steps; the result reprices within 1e-10. Prices
    outside the attainable band raise ``InversionError`` naming the violated
    bound.
    """
    if spot <= 0 or strike < 0 or maturity <= 0:
        raise DomainError(f"implied_vol domain: spot={spot}, strike={strike}, T={maturity}")
    lo_price = max(spot - strike * math.exp(-rate * maturity), 0.0)
    if price < lo_price - _PRICE_TOL:
        raise InversionError(
            f"price {price} below discounted intrinsic {lo_price}", bound="lower"
        )
    if price > spot + _PRICE_TOL:
        raise InversionError(f"price {price} above spot {spot}", bound="upper")
    if price <= lo_price:
        return 0.0

    # seed, then grow the upper bracket until it prices above the target
    seed = math.sqrt(2.0 * math.pi / maturity) * price / spot
    hi = min(max(2.0 * seed, 0.5), 20.0)
    while bs_call_price(spot, strike, rate, maturity, hi) < price:
        hi *= 2.0
        if hi > 1e3:
            raise InversionError(f"price {price} not attainable below vol {hi}", bound="upper")
    lo = 0.0
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if bs_call_price(spot, strike, rate, maturity, mid) < price:
            lo = mid
        else:
            hi = mid
    vol = 0.5 * (lo + hi)
    for _ in range(8):
        diff = bs_call_price(spot, strike, rate, maturity, vol) - price
        if abs(diff) <= _PRICE_TOL:
            break
        vega = bs_vega(spot, strike, rate, maturity, vol)
        if vega <= 1e-300:
            break
        step = diff / vega
        vol = min(max(vol - step, lo), hi)
    return max(vol, 0.0)


def forward_call_delta(strike, forward, vol, maturity):
    """Forward call delta N(d1) under the convention in the module docstring."""
    if strike <= 0 or forward <= 0 or vol <= 0 or maturity <= 0:
        raise DomainError("forward_call_delta needs positive strike/forward/vol/maturity")
    srt = vol * math.sqrt(maturity)
    d1 = math.log(forward / strike) / srt + 0.5 * srt
    return _phi(d1)


def delta_to_strike(delta, forward, vol, maturity):
    """Strike whose forward call delta N(d1) equals ``delta`` (closed form)."""
    if not 0 < delta < 1:
        raise DomainError(f"delta {delta} outside (0, 1)")
    if forward <= 0 or vol <= 0 or maturity <= 0:
        raise DomainError("delta_to_strike needs positive forward/vol/maturity")
    srt = vol * math.sqrt(maturity)
    return forward * math.exp(-srt * float(ndtri(delta)) + 0.5 * srt * srt)


# --- FX quote conversion -------------------------------------------------

SMILE_DELTAS = (0.1, 0.25, 0.5, 0.75, 0.9)


def quotes_to_smile(row):
    """ATM/RR/BF quotes -> five (delta, vol) pairs on {0.1, 0.25, 0.5, 0.75, 0.9}.

    Uses the smile (broker-strangle-free) identities
    sigma(wing_call) = atm + bf + rr/2 and sigma(wing_put) = atm + bf - rr/2,
    with the 0.75/0.9 call deltas playing the 25/10-delta put wings.
    """
    vols = {
        0.5: row.atm,
        0.25: row.atm + row.bf25 + 0.5 * row.rr25,
        0.75: row.atm + row.bf25 - 0.5 * row.rr25,
        0.1: row.atm + row.bf10 + 0.5 * row.rr10,
        0.9: row.atm + row.bf10 - 0.5 * row.rr10,
    }
    for delta in SMILE_DELTAS:
        if vols[delta] <= 0:
            raise InvalidQuoteError(
                f"tenor {row.tenor}: converted vol at delta {delta} is "
                f"{vols[delta]:.6f} <= 0",
                wing=delta,
            )
    return [(delta, vols[delta]) for delta in SMILE_DELTAS]


# --- lattice plumbing ----------------------------------------------------


def flatten(surface):
    """Surface matrix -> length-(n_points) vector, maturity-major."""
    return surface.vols.reshape(-1).copy()


def unflatten(vector, grid, asset_id="", observation_date=None):
    """Inverse of ``flatten`` onto the given grid."""
    vec = np.asarray(vector, dtype=np.float64)
    if vec.shape != (grid.n_points,):
        raise GridMismatchError(f"vector length {vec.shape} != grid size {grid.n_points}")
    vols = vec.reshape(len(grid.maturities), len(grid.deltas))
    return VolSurface(asset_id, observation_date, vols, grid)


def normalize_features(maturity, delta):
    """Decoder input coordinates: (log maturity, delta). Invertible."""
    if np.any(np.asarray(maturity) <= 0):
        raise DomainError("maturity must be positive")
    d = np.asarray(delta)
    if np.any(d <= 0) or np.any(d >= 1):
        raise DomainError("delta must be inside (0, 1)")
    return np.log(maturity), delta


def denormalize_features(log_maturity, delta):
    return np.exp(log_maturity), delta
