"""Benchmark the jitted kernels against the pure-numpy fallback.

Reports evals/sec for the bilinear composite resample and the TV sum at
campaign-realistic sizes, plus the numeric agreement between both paths.

    python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from patchlab import kernels


def time_fn(fn, *args, repeats: int) -> float:
    fn(*args)  # warmup (and JIT compile on the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return repeats / (time.perf_counter() - start)


def main() -> None:
    parser = argparse.ArgumentParser(description="numba vs numpy kernel throughput")
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    patch = rng.uniform(0.0, 255.0, size=(512, 512, 3))

    cases = [
        ("bilinear 512x512 -> 115x115", lambda f: f(patch, 115, 115)),
        ("bilinear 512x512 -> 1024x512", lambda f: f(patch, 512, 1024)),
    ]
    print(f"active backend: {kernels.BACKEND}")
    for name, call in cases:
        numpy_eps = time_fn(lambda *a: call(kernels._bilinear_resize_numpy), repeats=args.repeats)
        line = f"{name:34s} numpy {numpy_eps:8.1f}/s"
        if kernels.HAS_NUMBA:
            numba_eps = time_fn(lambda *a: call(kernels._bilinear_resize_numba), repeats=args.repeats)
            out_a = call(kernels._bilinear_resize_numpy)
            out_b = call(kernels._bilinear_resize_numba)
            line += f"   numba {numba_eps:8.1f}/s   speedup {numba_eps / numpy_eps:5.2f}x"
            line += f"   max|diff| {np.max(np.abs(out_a - out_b)):.2e}"
        print(line)

    numpy_eps = time_fn(kernels._total_variation_sum_numpy, patch, repeats=args.repeats)
    line = f"{'tv-sum 512x512':34s} numpy {numpy_eps:8.1f}/s"
    if kernels.HAS_NUMBA:
        numba_eps = time_fn(kernels._total_variation_sum_numba, patch, repeats=args.repeats)
        a = kernels._total_variation_sum_numpy(patch)
        b = kernels._total_variation_sum_numba(patch)
        line += f"   numba {numba_eps:8.1f}/s   speedup {numba_eps / numpy_eps:5.2f}x"
        line += f"   rel diff {abs(a - b) / abs(a):.2e}"
    print(line)


if __name__ == "__main__":
    main()
