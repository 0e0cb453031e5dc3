"""Limited-memory quasi-Newton minimizer with Armijo backtracking.

Small, deterministic, and dependency-free so calibration behaves identically
across platforms. The curvature history uses the standard two-loop
recursion; pairs with non-positive s.y are dropped to keep the implicit
Hessian positive definite.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    converged: bool
    diverged: bool
    n_evals: int


def minimize(fun_grad, x0, max_iter=200, gtol=1e-8, memory=10, armijo_c1=1e-4,
             shrink=0.5, max_backtracks=30):
    """Minimize ``fun_grad(x) -> (f, g)`` from ``x0``.

    ``converged`` reports whether the infinity norm of the gradient fell
    below ``gtol``; ``diverged`` flags a non-finite objective at the start
    (the caller's cue to discard this start).
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun_grad(x)
    n_evals = 1
    if not (np.isfinite(f) and np.isfinite(g).all()):
        return OptResult(x, float(f), float("inf"), 0, False, True, n_evals)

    s_hist, y_hist, rho_hist = [], [], []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gnorm = float(np.abs(g).max())
        if gnorm < gtol:
            return OptResult(x, float(f), gnorm, iterations - 1, True, False, n_evals)

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        direction = -q

        slope = float(g @ direction)
        if slope >= 0.0:  # history went bad; fall back to steepest descent
            direction = -g
            slope = -float(g @ g)
            s_hist, y_hist, rho_hist = [], [], []

        step = 1.0 if y_hist else min(1.0, 1.0 / max(1.0, float(np.abs(g).max())))
        f_new = g_new = None
        accepted = False
        for _ in range(max_backtracks):
            x_trial = x + step * direction
            f_trial, g_trial = fun_grad(x_trial)
            n_evals += 1
            if np.isfinite(f_trial) and f_trial <= f + armijo_c1 * step * slope:
                f_new, g_new, x_new = f_trial, g_trial, x_trial
                accepted = True
                break
            step *= shrink
        if not accepted:
            return OptResult(x, float(f), gnorm, iterations, gnorm < gtol, False, n_evals)

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new

    gnorm = float(np.abs(g).max())
    return OptResult(x, float(f), gnorm, max_iter, gnorm < gtol, False, n_evals)
