"""Static-arbitrage diagnostics on total-variance grids and penalty terms
for training.

Everything works on w(X, t) = t * sigma(X, t)^2 over log-moneyness
X = log(K/F). Derivatives come from second-order finite differences on a
dense lattice rather than backprop through a decoder, so the checks apply
to any surface source. The calendar condition is dw/dt >= 0; the butterfly
condition is g(X, t) >= 0 with

    g = (1 - X w'/(2w))^2 - (w'/4) (1/w + 1/4) + w''/2

(w' and w'' in X). Penalties are squared violations beyond the shared
tolerance, normalized by node count, so they vanish exactly when the
report is clean.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtri

from volcraft.errors import CoverageError, DomainError, ResolutionError, ShapeError

DEFAULT_TOL = 1e-8
DEFAULT_RESOLUTION = 41


@dataclass
class TotalVarianceGrid:
    """Total implied variance sampled on a rectangular (t, X) lattice."""

    log_moneyness: np.ndarray  # (n_x,) strictly increasing
    maturities: np.ndarray  # (n_t,) strictly increasing, > 0
    w: np.ndarray  # (n_t, n_x), >= 0

    def __post_init__(self):
        self.log_moneyness = np.asarray(self.log_moneyness, dtype=np.float64)
        self.maturities = np.asarray(self.maturities, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if np.any(np.diff(self.log_moneyness) <= 0):
            raise DomainError("log-moneyness axis must be strictly increasing")
        if np.any(np.diff(self.maturities) <= 0) or np.any(self.maturities <= 0):
            raise DomainError("maturity axis must be strictly increasing and positive")
        if self.w.shape != (len(self.maturities), len(self.log_moneyness)):
            raise ShapeError(f"w shape {self.w.shape} does not match the axes")
        if np.any(self.w < 0) or not np.isfinite(self.w).all():
            raise DomainError("total variance must be finite and >= 0")


# --- finite-difference stencils -------------------------------------------


def derivative_matrix(axis):
    """First-derivative operator on a (possibly non-uniform) strictly
    increasing axis: 3-point central stencils inside, 3-point one-sided at
    the edges. Second-order accurate on smooth data."""
    x = np.asarray(axis, dtype=np.float64)
    n = len(x)
    if n < 3:
        raise ResolutionError(f"need at least 3 nodes for derivatives, got {n}")
    mat = np.zeros((n, n))
    for i in range(1, n - 1):
        h1 = x[i] - x[i - 1]
        h2 = x[i + 1] - x[i]
        mat[i, i - 1] = -h2 / (h1 * (h1 + h2))
        mat[i, i] = (h2 - h1) / (h1 * h2)
        mat[i, i + 1] = h1 / (h2 * (h1 + h2))
    h1 = x[1] - x[0]
    h2 = x[2] - x[1]
    mat[0, 0] = -(2 * h1 + h2) / (h1 * (h1 + h2))
    mat[0, 1] = (h1 + h2) / (h1 * h2)
    mat[0, 2] = -h1 / (h2 * (h1 + h2))
    h1 = x[-2] - x[-3]
    h2 = x[-1] - x[-2]
    mat[-1, -3] = h2 / (h1 * (h1 + h2))
    mat[-1, -2] = -(h1 + h2) / (h1 * h2)
    mat[-1, -1] = (h1 + 2 * h2) / (h2 * (h1 + h2))
    return mat


def second_derivative_matrix(axis):
    """Second-derivative operator: 3-point stencils, edge rows anchored at
    the nearest interior stencil (exact for quadratics everywhere)."""
    x = np.asarray(axis, dtype=np.float64)
    n = len(x)
    if n < 3:
        raise ResolutionError(f"need at least 3 nodes for second derivatives, got {n}")
    mat = np.zeros((n, n))

    def stencil(row, i):
        h1 = x[i] - x[i - 1]
        h2 = x[i + 1] - x[i]
        mat[row, i - 1] = 2.0 / (h1 * (h1 + h2))
        mat[row, i] = -2.0 / (h1 * h2)
        mat[row, i + 1] = 2.0 / (h2 * (h1 + h2))

    for i in range(1, n - 1):
        stencil(i, i)
    stencil(0, 1)
    stencil(n - 1, n - 2)
    return mat


# --- checks ----------------------------------------------------------------


def calendar_check(grid, tol=DEFAULT_TOL):
    """Nodes where dw/dt < -tol, as (X, t, deficit) with deficit = -dw/dt."""
    if len(grid.maturities) < 3:
        raise ResolutionError("calendar check needs at least 3 maturity nodes")
    dwdt = derivative_matrix(grid.maturities) @ grid.w
    violations = []
    for i, j in zip(*np.nonzero(dwdt < -tol)):
        violations.append(
            (float(grid.log_moneyness[j]), float(grid.maturities[i]), float(-dwdt[i, j]))
        )
    return violations


def _g_values(grid):
    """Durrleman g on the lattice; NaN at w == 0 nodes (excluded, reported)."""
    d1 = derivative_matrix(grid.log_moneyness)
    d2 = second_derivative_matrix(grid.log_moneyness)
    w = grid.w
    wp = w @ d1.T
    wpp = w @ d2.T
    x = grid.log_moneyness[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (1.0 - x * wp / (2.0 * w)) ** 2 - (wp / 4.0) * (1.0 / w + 0.25) + wpp / 2.0
    g = np.where(w > 0.0, g, np.nan)
    return g


def butterfly_check(grid, tol=DEFAULT_TOL):
    """-> (violations, g) where violations are (X, t, -g) at nodes with
    g < -tol; g carries NaN at w == 0 nodes, which are skipped."""
    if len(grid.log_moneyness) < 5:
        raise ResolutionError("butterfly check needs at least 5 log-moneyness nodes")
    g = _g_values(grid)
    bad = np.nonzero(np.nan_to_num(g, nan=np.inf) < -tol)
    violations = [
        (float(grid.log_moneyness[j]), float(grid.maturities[i]), float(-g[i, j]))
        for i, j in zip(*bad)
    ]
    return violations, g


def penalty_losses(grid, tol=DEFAULT_TOL):
    """(L_cal, L_but): node-count-normalized squared violations beyond tol.

    Zero exactly when the corresponding check reports no violations.
    """
    dwdt = derivative_matrix(grid.maturities) @ grid.w
    r_cal = np.maximum(0.0, -dwdt - tol)
    l_cal = float(np.sum(r_cal**2) / dwdt.size)
    g = _g_values(grid)
    valid = ~np.isnan(g)
    r_but = np.maximum(0.0, -g[valid] - tol)
    l_but = float(np.sum(r_but**2) / max(valid.sum(), 1))
    return l_cal, l_but


@dataclass
class ArbitrageReport:
    """Outcome of the Appendix-style static-arbitrage checks on one grid."""

    calendar_violations: list
    butterfly_violations: list
    max_calendar_deficit: float
    min_g: float
    n_excluded: int
    tolerance: float = DEFAULT_TOL

    @property
    def passes(self):
        return not self.calendar_violations and not self.butterfly_violations

    def to_dict(self, max_offenders=10):
        def fmt(violations):
            worst = sorted(violations, key=lambda v: -v[2])[:max_offenders]
            return [
                {"log_moneyness": x, "maturity": t, "magnitude": m} for x, t, m in worst
            ]

        return {
            "passes": self.passes,
            "tolerance": self.tolerance,
            "calendar_violation_count": len(self.calendar_violations),
            "butterfly_violation_count": len(self.butterfly_violations),
            "max_calendar_deficit": self.max_calendar_deficit,
            "min_g": self.min_g,
            "excluded_zero_variance_nodes": self.n_excluded,
            "worst_calendar": fmt(self.calendar_violations),
            "worst_butterfly": fmt(self.butterfly_violations),
        }


def evaluate_grid(grid, tol=DEFAULT_TOL):
    cal = calendar_check(grid, tol)
    but, g = butterfly_check(grid, tol)
    dwdt = derivative_matrix(grid.maturities) @ grid.w
    return ArbitrageReport(
        calendar_violations=cal,
        butterfly_violations=but,
        max_calendar_deficit=float(max(0.0, -dwdt.min())),
        min_g=float(np.nanmin(g)),
        n_excluded=int(np.isnan(g).sum()),
        tolerance=tol,
    )


# --- (delta, t) sampling -> (X, t) grids -----------------------------------


def log_moneyness_from_vol(delta, maturity, vol):
    """X = log(K/F) of the strike at the given forward call delta; F = 1.

    Closed form of ``surfaces.delta_to_strike``: X = -vol sqrt(t) ndtri(delta)
    + vol^2 t / 2 (so X at delta 0.5 is vol^2 t / 2).
    """
    srt = vol * np.sqrt(maturity)
    return -srt * ndtri(delta) + 0.5 * srt * srt


def _common_band(x_rows):
    lo = max(float(row.min()) for row in x_rows)
    hi = min(float(row.max()) for row in x_rows)
    if not lo < hi:
        raise CoverageError(
            f"log-moneyness bands do not overlap: available band ({lo}, {hi})",
            band=(lo, hi),
        )
    return lo, hi


def _regrid_rows(x_rows, sigma_rows, maturities, n_x):
    """Monotone-cubic re-interpolation of per-maturity smiles onto a shared
    uniform X axis; returns a TotalVarianceGrid."""
    lo, hi = _common_band(x_rows)
    x_axis = np.linspace(lo, hi, n_x)
    w = np.empty((len(maturities), n_x))
    for i, (xs, sig, t) in enumerate(zip(x_rows, sigma_rows, maturities)):
        interp = PchipInterpolator(xs, sig, extrapolate=False)
        w[i] = t * interp(x_axis) ** 2
    return TotalVarianceGrid(x_axis, np.asarray(maturities, dtype=np.float64), w)


def to_total_variance(model, z, dense_resolution=DEFAULT_RESOLUTION):
    """Sample a pointwise decoder on a dense (delta, t) lattice and map it to
    total variance on a shared uniform log-moneyness axis (forward = 1)."""
    from volcraft import vaemodel  # local import; vaemodel uses the penalty ops here

    if dense_resolution < 20:
        raise ResolutionError(f"dense resolution must be >= 20, got {dense_resolution}")
    grid = model.grid
    t_axis = np.exp(
        np.linspace(np.log(grid.maturities[0]), np.log(grid.maturities[-1]), dense_resolution)
    )
    deltas = np.linspace(grid.deltas[0], grid.deltas[-1], dense_resolution)
    coords = np.column_stack(
        [np.repeat(t_axis, len(deltas)), np.tile(deltas, len(t_axis))]
    )
    sigma = vaemodel.decode_points(model, z, coords).reshape(len(t_axis), len(deltas))
    x_rows, sigma_rows = [], []
    for i, t in enumerate(t_axis):
        x = log_moneyness_from_vol(deltas, t, sigma[i])
        order = np.argsort(x)
        x_rows.append(x[order])
        sigma_rows.append(sigma[i][order])
    return _regrid_rows(x_rows, sigma_rows, t_axis, dense_resolution)


def surface_to_total_variance(surface, n_x=DEFAULT_RESOLUTION):
    """Same mapping for a raw gridded surface (maturity axis stays as-is)."""
    grid = surface.grid
    x_rows, sigma_rows = [], []
    for i, t in enumerate(grid.maturities):
        x = log_moneyness_from_vol(grid.deltas, t, surface.vols[i])
        order = np.argsort(x)
        x_rows.append(x[order])
        sigma_rows.append(surface.vols[i][order])
    return _regrid_rows(x_rows, sigma_rows, grid.maturities, n_x)


# --- differentiable penalty chain for training -----------------------------
#
# During training the decoder is sampled on a fixed (delta, t) lattice. The
# X positions and the linear re-gridding weights are frozen from the current
# (detached) vols, so the penalty is a smooth composition of constant linear
# operators and elementwise arithmetic in the sampled vols; gradients flow
# through the samples only.


@dataclass
class PenaltyOps:
    t_axis: np.ndarray  # (n_t,)
    x_axis: np.ndarray  # (n_x,)
    interp: np.ndarray  # (n_t, n_x, n_d) linear re-gridding, delta-ascending order
    d_t: np.ndarray  # (n_t, n_t)
    d_x: np.ndarray  # (n_x, n_x)
    d_xx: np.ndarray  # (n_x, n_x)


def penalty_operators(sigma_field, t_axis, delta_axis, n_x=None):
    """Freeze the X lattice and re-gridding weights from current vols.

    ``sigma_field`` is (n_t, n_d) with both axes ascending. Vols are clamped
    to [0.01, 2.0] for the X mapping only, keeping the frozen lattice sane
    while the live vols stay free. Each row's sort permutation (X need not be
    monotone in delta when the smile is steep) is folded into the
    interpolation matrix, so both input and gradients stay delta-ascending.
    """
    t_axis = np.asarray(t_axis, dtype=np.float64)
    delta_axis = np.asarray(delta_axis, dtype=np.float64)
    n_t, n_d = sigma_field.shape
    if n_x is None:
        n_x = n_d
    sig = np.clip(sigma_field, 0.01, 2.0)
    x_rows = log_moneyness_from_vol(delta_axis[None, :], t_axis[:, None], sig)
    orders = np.argsort(x_rows, axis=1)
    x_sorted = np.take_along_axis(x_rows, orders, axis=1)
    lo, hi = _common_band(list(x_sorted))
    x_axis = np.linspace(lo, hi, n_x)
    interp = np.zeros((n_t, n_x, n_d))
    cols = np.arange(n_x)
    for i in range(n_t):
        xs = x_sorted[i]
        idx = np.clip(np.searchsorted(xs, x_axis) - 1, 0, n_d - 2)
        frac = (x_axis - xs[idx]) / np.maximum(xs[idx + 1] - xs[idx], 1e-300)
        interp[i, cols, orders[i][idx]] = 1.0 - frac
        interp[i, cols, orders[i][idx + 1]] = frac
    return PenaltyOps(
        t_axis=t_axis,
        x_axis=x_axis,
        interp=interp,
        d_t=derivative_matrix(t_axis),
        d_x=derivative_matrix(x_axis),
        d_xx=second_derivative_matrix(x_axis),
    )


def penalty_apply(sigma_field, ops, tol=DEFAULT_TOL):
    """(L_cal, L_but, dL_cal/dsigma, dL_but/dsigma) for frozen operators.

    ``sigma_field`` is (n_t, n_d) delta-ascending; gradients come back in the
    same layout.
    """
    sig_x = np.einsum("inj,ij->in", ops.interp, sigma_field)  # (n_t, n_x)
    w = ops.t_axis[:, None] * sig_x**2
    n_nodes = w.size

    # calendar
    dwdt = ops.d_t @ w
    r_cal = np.maximum(0.0, -dwdt - tol)
    l_cal = float(np.sum(r_cal**2) / n_nodes)
    dl_ddwdt = -2.0 * r_cal / n_nodes
    dlcal_dw = ops.d_t.T @ dl_ddwdt

    # butterfly
    wp = w @ ops.d_x.T
    wpp = w @ ops.d_xx.T
    x = ops.x_axis[None, :]
    safe_w = np.maximum(w, 1e-12)
    u = 1.0 - x * wp / (2.0 * safe_w)
    g = u**2 - (wp / 4.0) * (1.0 / safe_w + 0.25) + wpp / 2.0
    r_but = np.maximum(0.0, -g - tol)
    l_but = float(np.sum(r_but**2) / n_nodes)
    dl_dg = -2.0 * r_but / n_nodes
    dg_dw = 2.0 * u * (x * wp / (2.0 * safe_w**2)) + (wp / 4.0) / safe_w**2
    dg_dwp = 2.0 * u * (-x / (2.0 * safe_w)) - 0.25 * (1.0 / safe_w + 0.25)
    dlbut_dw = dl_dg * dg_dw + (dl_dg * dg_dwp) @ ops.d_x + (dl_dg * 0.5) @ ops.d_xx

    def back_to_sigma(dl_dw):
        dl_dsig_x = dl_dw * 2.0 * ops.t_axis[:, None] * sig_x
        return np.einsum("inj,in->ij", ops.interp, dl_dsig_x)

    return l_cal, l_but, back_to_sigma(dlcal_dw), back_to_sigma(dlbut_dw)
