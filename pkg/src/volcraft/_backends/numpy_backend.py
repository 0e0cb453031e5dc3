"""NumPy fallback for the compiled MLP kernels.

Matches the compiled extension's semantics: forward dot products accumulate
in ascending input-index order via broadcast adds (never BLAS), which makes
every output row bitwise independent of the batch it sits in. Backward and
Adam only promise agreement to float64 round-off, and use BLAS where it
helps.

Activation codes: 0 identity, 1 relu, 2 sigmoid, 3 softplus.
"""

import numpy as np

BACKEND_NAME = "python"


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _act(pre, code):
    if code == 0:
        return pre.copy()
    if code == 1:
        return np.where(pre > 0.0, pre, 0.0)
    if code == 2:
        return _sigmoid(pre)
    return _softplus(pre)


def _act_deriv(pre, code):
    if code == 0:
        return np.ones_like(pre)
    if code == 1:
        return np.where(pre > 0.0, 1.0, 0.0)
    s = _sigmoid(pre)
    if code == 2:
        return s * (1.0 - s)
    return s


def _layer_pre(x, w, b):
    # k-loop accumulation: same op order as the compiled kernel's inner loop.
    acc = np.tile(b, (x.shape[0], 1))
    for k in range(x.shape[1]):
        acc += x[:, k : k + 1] * w[:, k]
    return acc


def mlp_forward_cache(weights, biases, acts, x):
    cur = np.ascontiguousarray(x, dtype=np.float64)
    inputs, pres = [], []
    for w, b, code in zip(weights, biases, acts):
        pre = _layer_pre(cur, w, b)
        inputs.append(cur)
        pres.append(pre)
        cur = _act(pre, int(code))
    return cur, inputs, pres


def mlp_forward(weights, biases, acts, x):
    out, _, _ = mlp_forward_cache(weights, biases, acts, x)
    return out


def mlp_backward_from_cache(weights, acts, inputs, pres, cotangent):
    cot = np.ascontiguousarray(cotangent, dtype=np.float64)
    n_layers = len(weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        d = cot * _act_deriv(pres[l], int(acts[l]))
        grad_b[l] = d.sum(axis=0)
        grad_w[l] = d.T @ inputs[l]
        cot = d @ weights[l]
    return grad_w, grad_b, cot


def mlp_backward(weights, biases, acts, x, cotangent):
    _, inputs, pres = mlp_forward_cache(weights, biases, acts, x)
    return mlp_backward_from_cache(weights, acts, inputs, pres, cotangent)


def adam_update(p, g, m, v, c1, c2, lr, b1, b2, eps):
    m[:] = b1 * m + (1.0 - b1) * g
    v[:] = b2 * v + (1.0 - b2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
