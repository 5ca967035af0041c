"""Time the compiled and pure-Python kernels on the same inputs.

Usage: python3 benchmarks/bench_backends.py [--repeat R]

Both backends must agree before timings are reported: sampled paths
exactly, contraction coefficients up to summation-order rounding.
"""

import argparse
import time

import numpy as np

from nhclt import _backend
from nhclt.altsub import build_altsub_chain, solve_alt_thresholds
from nhclt.montecarlo import _tables, path_uniforms


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    rng = np.random.default_rng(0)
    rows = rng.dirichlet(np.ones(300), size=300)
    yield "delta_rows 300x300 dense", "delta_rows", (np.ascontiguousarray(rows),)
    sol = solve_alt_thresholds(200)
    law = build_altsub_chain(sol, 200).law
    K = np.ascontiguousarray(law.seq[1].rows)
    yield "delta_rows altsub 401x401", "delta_rows", (K,)
    tab = _tables(law)
    u = path_uniforms(1, 0, 2000, law.n + law.m)
    yield "sample_chain altsub 2000x201", "sample_chain", (tab.cum, tab.kernel_id, tab.cum0, u)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _backend.compiled_impl is None:
        print("compiled backend not built; only the Python timings are shown")
    print(f"{'case':32s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for label, fn_name, fn_args in cases():
        py_t, py_out = best_of(lambda: getattr(_backend.python_impl, fn_name)(*fn_args), args.repeat)
        if _backend.compiled_impl is None:
            print(f"{label:32s} {py_t:11.4f} {'-':>11s} {'-':>8s}")
            continue
        c_t, c_out = best_of(lambda: getattr(_backend.compiled_impl, fn_name)(*fn_args), args.repeat)
        same = (np.array_equal(py_out, c_out) if fn_name == "sample_chain"
                else abs(float(py_out) - float(c_out)) <= 1e-14)
        if not same:
            raise SystemExit(f"backends disagree on {label}")
        print(f"{label:32s} {py_t:11.4f} {c_t:11.4f} {py_t / c_t:8.1f}x")


if __name__ == "__main__":
    main()
