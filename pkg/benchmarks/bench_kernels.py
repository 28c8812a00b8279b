#!/usr/bin/env python3
"""Benchmark the conv1d kernels: compiled extension vs numpy fallback.

The forward/backward pair is the training loop's innermost non-BLAS work;
the remaining hot path (the Chebyshev recurrence) is matmul-shaped and stays
on numpy/BLAS on purpose.  Representative shapes cover the transaction-table
configuration (10 channels, short sequences) up to the temporal-graph scale.

Usage: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from chebnet import kernels

CASES = [
    # (batch, in_channels, length, n_kernels)   kernel length fixed at 5
    ("transaction 1x10", 400, 1, 10, 10),
    ("transaction deep", 400, 10, 20, 10),
    ("temporal 4x20", 800, 4, 20, 16),
    ("temporal wide", 200, 4, 120, 32),
]

REPEATS = 30


def bench(fn, *args):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(REPEATS):
        fn(*args)
    return (time.perf_counter() - start) / REPEATS


def run_case(name, b, c, length, f):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((b, c, length))
    w = rng.standard_normal((f, c, 5))
    bias = rng.standard_normal(f)
    up = rng.standard_normal((b, f, length - 4))

    rows = {}
    rows["numpy fwd"] = bench(kernels._np_conv1d_forward, x, w, bias)
    rows["numpy bwd"] = bench(kernels._np_conv1d_backward, x, w, up)
    if kernels.BACKEND == "c":
        rows["c fwd"] = bench(kernels.conv1d_forward, x, w, bias)
        rows["c bwd"] = bench(kernels.conv1d_backward, x, w, up)
        fwd_speedup = rows["numpy fwd"] / rows["c fwd"]
        bwd_speedup = rows["numpy bwd"] / rows["c bwd"]
        print(f"{name:18s} numpy {rows['numpy fwd'] * 1e3:7.3f}/"
              f"{rows['numpy bwd'] * 1e3:7.3f} ms  "
              f"c {rows['c fwd'] * 1e3:7.3f}/{rows['c bwd'] * 1e3:7.3f} ms  "
              f"speedup {fwd_speedup:4.1f}x/{bwd_speedup:4.1f}x")
    else:
        print(f"{name:18s} numpy {rows['numpy fwd'] * 1e3:7.3f}/"
              f"{rows['numpy bwd'] * 1e3:7.3f} ms  (extension not built)")


def main():
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'case':18s} {'fwd/bwd per call':>24s}")
    for case in CASES:
        run_case(*case)


if __name__ == "__main__":
    main()
