"""Shared test oracles, deliberately independent of the code paths they check:
gradients come from central differences over the forward pass only, and the
Heston oracle is a plain Euler full-truncation Monte Carlo."""

import math

import numpy as np

from volcraft import nncore


def perturbed_forward(params, x, layer_idx, which, flat_idx, h):
    trial = params.copy()
    layer = trial.layers[layer_idx]
    target = layer.weights if which == "w" else layer.biases
    flat = target.reshape(-1)
    flat[flat_idx] += h
    return nncore.forward(trial, x)


def fd_param_grads(params, x, cotangent, h=1e-5):
    """Central finite differences of forward(params, x) . cotangent."""
    grads = []
    for li, layer in enumerate(params.layers):
        gw = np.zeros_like(layer.weights)
        for idx in range(layer.weights.size):
            up = perturbed_forward(params, x, li, "w", idx, h)
            dn = perturbed_forward(params, x, li, "w", idx, -h)
            gw.reshape(-1)[idx] = (up - dn) @ cotangent / (2 * h)
        gb = np.zeros_like(layer.biases)
        for idx in range(layer.biases.size):
            up = perturbed_forward(params, x, li, "b", idx, h)
            dn = perturbed_forward(params, x, li, "b", idx, -h)
            gb[idx] = (up - dn) @ cotangent / (2 * h)
        grads.append((gw, gb))
    return grads


def fd_input_grad(params, x, cotangent, h=1e-5):
    g = np.zeros_like(x)
    for idx in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (nncore.forward(params, xp) - nncore.forward(params, xm)) @ cotangent / (2 * h)
    return g


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        np.testing.assert_allclose(aw, nw, rtol=rtol, atol=atol)
        np.testing.assert_allclose(ab, nb, rtol=rtol, atol=atol)


def random_mlp(rng, max_layers=3, max_units=16, in_dim=None, out_dim=None,
               activations=None):
    n_layers = int(rng.integers(1, max_layers + 1))
    dims = [in_dim or int(rng.integers(1, max_units + 1))]
    for _ in range(n_layers):
        dims.append(int(rng.integers(1, max_units + 1)))
    if out_dim:
        dims[-1] = out_dim
    menu = activations or [nncore.IDENTITY, nncore.RELU, nncore.SIGMOID, nncore.SOFTPLUS]
    acts = [menu[int(rng.integers(len(menu)))] for _ in range(n_layers)]
    return nncore.init_mlp(dims, acts, rng)


def heston_mc_call(params, spot, strike, maturity, n_paths=1_000_000, n_steps=None,
                   seed=12345):
    """Euler full-truncation Monte Carlo call price.

    Returns (price, standard_error). Antithetic-free so the standard error
    is a plain sample statistic.
    """
    rng = np.random.default_rng(seed)
    n_steps = n_steps or max(200, int(250 * maturity))
    dt = maturity / n_steps
    sqrt_dt = math.sqrt(dt)
    rho = params.rho
    rho_c = math.sqrt(1.0 - rho * rho)
    log_s = np.full(n_paths, math.log(spot))
    v = np.full(n_paths, params.v0)
    for _ in range(n_steps):
        z1 = rng.standard_normal(n_paths)
        z2 = rng.standard_normal(n_paths)
        v_plus = np.maximum(v, 0.0)
        sqrt_v = np.sqrt(v_plus)
        log_s += (params.rate - 0.5 * v_plus) * dt + sqrt_v * sqrt_dt * z1
        v += params.kappa * (params.theta - v_plus) * dt + params.sigma_v * sqrt_v * sqrt_dt * (
            rho * z1 + rho_c * z2
        )
    payoff = np.maximum(np.exp(log_s) - strike, 0.0) * math.exp(-params.rate * maturity)
    price = float(payoff.mean())
    stderr = float(payoff.std(ddof=1) / math.sqrt(n_paths))
    return price, stderr
