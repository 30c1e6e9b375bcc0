"""Benchmark the compiled kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import importlib
import time

import numpy as np

from aird._kernels import _ref


def bench(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    try:
        core = importlib.import_module("aird._kernels._core")
    except ImportError:
        core = None
        print("compiled kernels not built; showing fallback only\n")

    rng = np.random.default_rng(0)
    x = rng.normal(size=(32, 1, 32, 32))
    gcols = rng.normal(size=(32 * 32 * 32, 9))
    xp = rng.normal(size=(32, 16, 32, 32))
    gp = rng.normal(size=(32, 16, 16, 16))

    jobs = {
        "im2col  [32,1,32,32] k3s1p1": lambda m: m.im2col(x, 3, 3, 1, 1),
        "col2im  [32,1,32,32] k3s1p1": lambda m: m.col2im(gcols, 32, 1, 32, 32, 3, 3, 1, 1),
        "maxpool [32,16,32,32] k2s2": lambda m: m.maxpool2d(xp, 2, 2),
        "poolbwd [32,16,32,32] k2s2": lambda m: m.maxpool2d_backward(gp, m.maxpool2d(xp, 2, 2)[1], 2, 2, 32, 32),
    }

    header = f"{'kernel':<30}{'python':>12}"
    if core:
        header += f"{'compiled':>12}{'speedup':>10}"
    print(header)
    for name, job in jobs.items():
        t_py = bench(lambda: job(_ref), args.repeats)
        line = f"{name:<30}{t_py * 1e3:>10.3f}ms"
        if core:
            t_c = bench(lambda: job(core), args.repeats)
            line += f"{t_c * 1e3:>10.3f}ms{t_py / t_c:>9.1f}x"
            ref_out = job(_ref)
            core_out = job(core)
            if isinstance(ref_out, tuple):
                same = all(np.array_equal(a, b) for a, b in zip(ref_out, core_out))
            else:
                same = np.array_equal(ref_out, core_out)
            line += "  (bitwise ok)" if same else "  (MISMATCH)"
        print(line)


if __name__ == "__main__":
    main()
