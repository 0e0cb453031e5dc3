"""Latent-space calibration: fit codes to full or partial observations,
complete surfaces, and run the masking benchmark.

Two routes, as in the use-case split: the encoder route needs the full
surface and costs one forward pass; the optimizer route works from any
number of observations by minimizing mean squared vol error over the
observed points through the pointwise decoder, with exact gradients from
backprop and a multi-start limited-memory quasi-Newton driver.
"""

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from volcraft import nncore, optimize, surfaces, vaemodel
from volcraft.errors import (
    CalibrationFailureError,
    DecoderKindError,
    DomainError,
    GridMismatchError,
    ShapeError,
)

BPS = 1e4  # 1 bp = 1e-4 absolute vol


@dataclass
class CalibrationConfig:
    n_starts: int = 8
    max_iter: int = 200
    gtol: float = 1e-8
    ridge: float = 0.0  # optional ||z||^2 weight for ill-posed few-point fits
    seed: int = 0


@dataclass
class CalibrationResult:
    z: np.ndarray
    objective_value: float  # reconstruction error over the observed points at z
    iterations: int
    converged: bool
    completed_surface: object


@dataclass
class MaskingBenchmarkRow:
    latent_dim: int
    known_points: int
    mae_bps: float
    n_surfaces: int
    n_failures: int


def complete_surface(model, z, asset_id="", observation_date=None):
    """Decode z at every grid coordinate; positivity comes from the decoder."""
    vec = vaemodel.decode_surface_vector(model, z)
    return surfaces.unflatten(vec, model.grid, asset_id, observation_date)


def per_point_mae(predicted_surfaces, actual_surfaces):
    """Per-grid-point mean absolute error in bps over paired surfaces.

    Returns a (n_maturities, n_deltas) matrix; shows where on the lattice a
    model struggles (short-dated points usually dominate).
    """
    if len(predicted_surfaces) != len(actual_surfaces) or not predicted_surfaces:
        raise DomainError("need equal-length, non-empty surface lists")
    grid = actual_surfaces[0].grid
    total = np.zeros_like(actual_surfaces[0].vols)
    for pred, act in zip(predicted_surfaces, actual_surfaces):
        if not (pred.grid.matches(grid) and act.grid.matches(grid)):
            raise GridMismatchError("per-point MAE needs one shared grid")
        total += np.abs(pred.vols - act.vols)
    return total / len(actual_surfaces) * BPS


def mae_bps(predicted, actual):
    """Mean absolute vol error in basis points (1 bp = 1e-4)."""
    if isinstance(predicted, surfaces.VolSurface):
        if not isinstance(actual, surfaces.VolSurface):
            raise ShapeError("compare surfaces with surfaces")
        if not predicted.grid.matches(actual.grid):
            raise GridMismatchError("surfaces live on different grids")
        a, b = predicted.vols, actual.vols
    else:
        a = np.asarray(predicted, dtype=np.float64)
        b = np.asarray(actual, dtype=np.float64)
        if a.shape != b.shape:
            raise GridMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)) * BPS)


def calibrate_encoder(model, surface):
    """Single-pass calibration from a full surface: z is the encoder mean."""
    if not surface.grid.matches(model.grid):
        raise GridMismatchError("surface grid does not match the model grid")
    vec = surfaces.flatten(surface)
    z = vaemodel.encode(model, vec).mean
    completed = complete_surface(
        model, z, surface.asset_id, surface.observation_date
    )
    objective = vaemodel.reconstruction_error(surfaces.flatten(completed), vec)
    return CalibrationResult(
        z=z, objective_value=objective, iterations=0, converged=True,
        completed_surface=completed,
    )


def _objective_factory(model, observations, ridge):
    coords = np.array([[o.maturity, o.delta] for o in observations])
    targets = np.array([o.vol for o in observations])
    log_t, delta = surfaces.normalize_features(coords[:, 0], coords[:, 1])
    feats = np.column_stack([log_t, delta])
    n = len(observations)
    d = model.latent_dim

    def fun_grad(z):
        rows = np.column_stack([np.tile(z, (n, 1)), feats])
        out, cache = nncore.forward_cached(model.decoder, rows)
        resid = out[:, 0] - targets
        obj = float(np.mean(resid**2))
        cot = (2.0 / n) * resid[:, None]
        _, g_rows = nncore.backward_cached(model.decoder, cache, cot)
        gz = g_rows[:, :d].sum(axis=0)
        if ridge > 0.0:
            obj += ridge * float(z @ z)
            gz = gz + 2.0 * ridge * z
        return obj, gz

    def pure_objective(z):
        rows = np.column_stack([np.tile(z, (n, 1)), feats])
        out = nncore.forward_batch(model.decoder, rows)[:, 0]
        return float(np.mean((out - targets) ** 2))

    return fun_grad, pure_objective


def calibrate_latent(model, observations, config=None):
    """Fit z to observations by multi-start quasi-Newton descent.

    Starts at the origin plus seeded N(0, I) draws; the best finite objective
    wins. Raises ``CalibrationFailureError`` only if every start diverges.
    """
    if model.decoder_kind != vaemodel.POINTWISE:
        raise DecoderKindError("latent calibration needs a pointwise decoder")
    if not observations:
        raise DomainError("need at least one observation")
    config = config or CalibrationConfig()
    fun_grad, pure_objective = _objective_factory(model, observations, config.ridge)

    d = model.latent_dim
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    starts = [np.zeros(d)]
    for _ in range(config.n_starts - 1):
        starts.append(rng.standard_normal(d))

    best = None
    n_diverged = 0
    for x0 in starts:
        res = optimize.minimize(
            fun_grad, x0, max_iter=config.max_iter, gtol=config.gtol
        )
        if res.diverged:
            n_diverged += 1
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise CalibrationFailureError(
            f"all {len(starts)} starts diverged", best=None
        )
    return CalibrationResult(
        z=best.x,
        objective_value=pure_objective(best.x),
        iterations=best.iterations,
        converged=best.converged,
        completed_surface=complete_surface(model, best.x),
    )


# --- masking benchmark -------------------------------------------------------


def thread_count():
    """Worker cap from VOLCRAFT_THREADS (default 1 = serial)."""
    try:
        return max(1, int(os.environ.get("VOLCRAFT_THREADS", "1")))
    except ValueError:
        return 1


def _mask_task(model, surface, k, task_seed, config):
    """One (surface, k) cell: sample k points, calibrate, score all points."""
    rng = np.random.default_rng(np.random.SeedSequence(task_seed))
    n_points = surface.grid.n_points
    chosen = np.sort(rng.choice(n_points, size=k, replace=False))
    coords = surface.grid.coordinates()[chosen]
    vols = surfaces.flatten(surface)[chosen]
    obs = [
        surfaces.Observation(m, dl, v) for (m, dl), v in zip(coords, vols)
    ]
    task_config = replace(config, seed=int(rng.integers(2**63)))
    result = calibrate_latent(model, obs, task_config)
    return mae_bps(result.completed_surface.vols.reshape(-1), surfaces.flatten(surface))


def run_masking_benchmark(models, validation_corpus, ks, seed, config=None):
    """Mean absolute error per (latent_dim, known_points) cell.

    ``models`` maps latent_dim -> trained pointwise model. For every surface
    and every k, k of the grid points are sampled uniformly without
    replacement (seeded per task, so any execution order gives identical
    output), the latent code is calibrated from them, and the completed
    surface is scored against all grid points. Failures are counted, never
    dropped silently.
    """
    if not validation_corpus:
        raise DomainError("validation corpus must be non-empty")
    config = config or CalibrationConfig()
    rows = []
    for d in sorted(models):
        model = models[d]
        for k in ks:
            if not 1 <= k <= model.grid.n_points:
                raise DomainError(f"known_points {k} outside 1..{model.grid.n_points}")
            tasks = []
            for s_idx, surf in enumerate(validation_corpus):
                task_seed = np.random.SeedSequence([seed, d, k, s_idx]).generate_state(1)[0]
                tasks.append((model, surf, k, int(task_seed), config))
            workers = thread_count()
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(_mask_task_safe, tasks))
            else:
                outcomes = [_mask_task_safe(t) for t in tasks]
            errors = [o for o in outcomes if o is not None]
            n_failures = sum(1 for o in outcomes if o is None)
            mean_mae = float(np.mean(errors)) if errors else float("nan")
            rows.append(
                MaskingBenchmarkRow(
                    latent_dim=d, known_points=k, mae_bps=mean_mae,
                    n_surfaces=len(validation_corpus), n_failures=n_failures,
                )
            )
    return rows


def _mask_task_safe(task):
    try:
        return _mask_task(*task)
    except CalibrationFailureError:
        return None


BENCHMARK_HEADER = ["latent_dim", "known_points", "mae_bps", "n_surfaces", "n_failures"]


def write_benchmark_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_HEADER)
        for row in rows:
            writer.writerow(
                [row.latent_dim, row.known_points, repr(row.mae_bps),
                 row.n_surfaces, row.n_failures]
            )
