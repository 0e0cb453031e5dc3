#!/usr/bin/env python3
"""Compare the compiled kernels against the NumPy fallback.

Times the three hot operations at training-typical shapes and reports the
largest numerical deviation between backends. Forward passes on
relu/identity nets must agree bitwise; exp-based activations may differ by
round-off.

Run:  python benchmarks/bench_backends.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from volcraft._backends import numpy_backend

try:
    from volcraft import _kernels as compiled
except ImportError:
    compiled = None


def make_net(rng, dims):
    ws = [np.ascontiguousarray(rng.standard_normal((o, i)) * 0.3) for i, o in zip(dims, dims[1:])]
    bs = [np.ascontiguousarray(rng.standard_normal(o) * 0.1) for o in dims[1:]]
    return ws, bs


WORKLOADS = [
    # (name, dims, acts, batch)  -- acts: 0 id, 1 relu, 2 sigmoid, 3 softplus
    ("encoder fwd  (40->32->32->8, relu, n=64)", [40, 32, 32, 8], [1, 1, 0], 64),
    ("decoder fwd  (6->32->32->1, softplus, n=2560)", [6, 32, 32, 1], [1, 1, 3], 2560),
    ("decoder fwd+bwd (same, n=2560)", [6, 32, 32, 1], [1, 1, 3], 2560),
]


def run_workload(backend, ws, bs, acts, x, cot, backward):
    if backward:
        return backend.mlp_backward(ws, bs, acts, x, cot)
    return backend.mlp_forward(ws, bs, acts, x)


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def flatten_result(res):
    if isinstance(res, tuple):
        gw, gb, gx = res
        return np.concatenate([a.ravel() for a in gw + gb] + [gx.ravel()])
    return res.ravel()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not built; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    print(f"{'workload':<50} {'python':>10} {'compiled':>10} {'speedup':>8}  max|diff|")
    for name, dims, acts_list, batch in WORKLOADS:
        ws, bs = make_net(rng, dims)
        acts = np.array(acts_list, dtype=np.int64)
        x = rng.standard_normal((batch, dims[0]))
        cot = rng.standard_normal((batch, dims[-1]))
        backward = "bwd" in name

        r_py = run_workload(numpy_backend, ws, bs, acts, x, cot, backward)
        r_c = run_workload(compiled, ws, bs, acts, x, cot, backward)
        diff = float(np.abs(flatten_result(r_py) - flatten_result(r_c)).max())

        t_py = timeit(lambda: run_workload(numpy_backend, ws, bs, acts, x, cot, backward),
                      args.repeats)
        t_c = timeit(lambda: run_workload(compiled, ws, bs, acts, x, cot, backward),
                     args.repeats)
        print(f"{name:<50} {t_py * 1e6:>8.0f}us {t_c * 1e6:>8.0f}us "
              f"{t_py / t_c:>7.1f}x  {diff:.2e}")

    # Adam on a realistic flat parameter block
    n = 2700
    p = rng.standard_normal(n)
    g = rng.standard_normal(n)
    m = np.zeros(n)
    v = np.zeros(n)
    adam_args = (0.1, 0.001, 1e-3, 0.9, 0.999, 1e-8)
    t_py = timeit(lambda: numpy_backend.adam_update(p.copy(), g, m.copy(), v.copy(), *adam_args),
                  args.repeats)
    t_c = timeit(lambda: compiled.adam_update(p.copy(), g, m.copy(), v.copy(), *adam_args),
                 args.repeats)
    print(f"{'adam update (2700 params)':<50} {t_py * 1e6:>8.0f}us {t_c * 1e6:>8.0f}us "
          f"{t_py / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
