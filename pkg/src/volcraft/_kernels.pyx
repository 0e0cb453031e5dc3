# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for dense-MLP forward/backward passes and Adam updates.

Semantics contract shared with the NumPy fallback (``_backends.numpy_backend``):

* forward accumulates each dot product in ascending input-index order with
  separately rounded multiply and add (the extension is compiled with
  ``-ffp-contract=off``), so a row's output is bitwise independent of the
  rest of the batch;
* relu derivative at exactly zero is zero;
* sigmoid and softplus use the overflow-safe branch forms.

Activation codes: 0 identity, 1 relu, 2 sigmoid, 3 softplus.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p, sqrt, fabs

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline double _sigmoid(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


cdef inline double _softplus(double x) nogil:
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    cdef double m = x if x > 0.0 else 0.0
    return m + log1p(exp(-fabs(x)))


cdef inline double _act(double x, int code) nogil:
    if code == 0:
        return x
    elif code == 1:
        return x if x > 0.0 else 0.0
    elif code == 2:
        return _sigmoid(x)
    else:
        return _softplus(x)


cdef inline double _act_deriv(double x, int code) nogil:
    cdef double s
    if code == 0:
        return 1.0
    elif code == 1:
        return 1.0 if x > 0.0 else 0.0
    elif code == 2:
        s = _sigmoid(x)
        return s * (1.0 - s)
    else:
        return _sigmoid(x)


cdef void _layer_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b,
                         int code, double[:, ::1] pre, double[:, ::1] out) nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t kdim = x.shape[1]
    cdef Py_ssize_t m = w.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = b[j]
            for k in range(kdim):
                acc = acc + w[j, k] * x[i, k]
            pre[i, j] = acc
            out[i, j] = _act(acc, code)


def mlp_forward_cache(list weights, list biases, long[::1] acts, object x):
    """Forward pass keeping per-layer inputs and pre-activations for backprop.

    Returns (output, inputs, pres) where inputs[l] feeds layer l and pres[l]
    is its pre-activation.
    """
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l
    cur = np.ascontiguousarray(x, dtype=np.float64)
    inputs = []
    pres = []
    cdef double[:, ::1] xv, wv, prev, outv
    cdef double[::1] bv
    cdef int code
    for l in range(n_layers):
        wv = weights[l]
        bv = biases[l]
        xv = cur
        pre = np.empty((cur.shape[0], wv.shape[0]), dtype=np.float64)
        out = np.empty_like(pre)
        prev = pre
        outv = out
        code = <int> acts[l]
        with nogil:
            _layer_forward(xv, wv, bv, code, prev, outv)
        inputs.append(cur)
        pres.append(pre)
        cur = out
    return cur, inputs, pres


def mlp_forward(list weights, list biases, long[::1] acts, object x):
    out, _, _ = mlp_forward_cache(weights, biases, acts, x)
    return out


def mlp_backward_from_cache(list weights, long[::1] acts, list inputs,
                            list pres, object cotangent):
    """Reverse pass: gradients of sum(output * cotangent).

    Returns (grad_weights, grad_biases, grad_input); parameter gradients are
    summed over the batch dimension.
    """
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, i, j, k, n, m, kdim
    cdef double d
    cdef double[:, ::1] cot, wv, xv, prev, gwv, nxt
    cdef double[::1] gbv
    cot_arr = np.ascontiguousarray(cotangent, dtype=np.float64)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        wv = weights[l]
        xv = inputs[l]
        prev = pres[l]
        n = xv.shape[0]
        m = wv.shape[0]
        kdim = wv.shape[1]
        gw = np.zeros((m, kdim), dtype=np.float64)
        gb = np.zeros(m, dtype=np.float64)
        nxt_arr = np.zeros((n, kdim), dtype=np.float64)
        cot = cot_arr
        gwv = gw
        gbv = gb
        nxt = nxt_arr
        with nogil:
            for i in range(n):
                for j in range(m):
                    d = cot[i, j] * _act_deriv(prev[i, j], <int> acts[l])
                    gbv[j] = gbv[j] + d
                    for k in range(kdim):
                        gwv[j, k] = gwv[j, k] + d * xv[i, k]
                        nxt[i, k] = nxt[i, k] + d * wv[j, k]
        grad_w[l] = gw
        grad_b[l] = gb
        cot_arr = nxt_arr
    return grad_w, grad_b, cot_arr


def mlp_backward(list weights, list biases, long[::1] acts, object x,
                 object cotangent):
    _, inputs, pres = mlp_forward_cache(weights, biases, acts, x)
    return mlp_backward_from_cache(weights, acts, inputs, pres, cotangent)


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                double c1, double c2, double lr, double b1, double b2,
                double eps):
    """In-place Adam step on flat views; c1/c2 are the bias corrections
    1 - beta^t already raised to the post-increment step count."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double mi, vi
    with nogil:
        for i in range(n):
            mi = b1 * m[i] + (1.0 - b1) * g[i]
            vi = b2 * v[i] + (1.0 - b2) * (g[i] * g[i])
            m[i] = mi
            v[i] = vi
            p[i] = p[i] - lr * (mi / c1) / (sqrt(vi / c2) + eps)
