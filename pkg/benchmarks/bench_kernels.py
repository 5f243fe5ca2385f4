"""Timing comparison of the compiled and pure-numpy conv/pool kernels.

Run:  python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tbnn._kernels import cython_available, numpy_impl

try:
    from tbnn._kernels import cython_impl
except ImportError:
    cython_impl = None

CASES = [
    ("conv 8x1x28x28 k16", "conv2d_forward",
     lambda r: (r.normal(size=(8, 1, 28, 28)), r.normal(size=(16, 1, 3, 3)), 1)),
    ("conv 32x16x14x14 k32", "conv2d_forward",
     lambda r: (r.normal(size=(32, 16, 14, 14)), r.normal(size=(32, 16, 3, 3)), 1)),
    ("conv_dx 32x16x14x14", "conv2d_backward_x",
     lambda r: (r.normal(size=(32, 32, 14, 14)), r.normal(size=(32, 16, 3, 3)), 1)),
    ("conv_dw 32x16x14x14", "conv2d_backward_w",
     lambda r: (r.normal(size=(32, 16, 14, 14)), r.normal(size=(32, 32, 14, 14)), 3, 3, 1)),
    ("pool 64x32x28x28", "maxpool2_forward",
     lambda r: (r.normal(size=(64, 32, 28, 28)),)),
]


def bench(fn, args, repeat: int) -> float:
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"cython extension available: {cython_available()}")
    print(f"{'case':28s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, fn_name, make in CASES:
        case_args = make(rng)
        t_np = bench(getattr(numpy_impl, fn_name), case_args, args.repeat)
        if cython_impl is None:
            print(f"{name:28s} {t_np * 1e3:9.2f}ms {'n/a':>10s} {'n/a':>8s}")
            continue
        t_cy = bench(getattr(cython_impl, fn_name), case_args, args.repeat)
        print(f"{name:28s} {t_np * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms {t_np / t_cy:7.2f}x")


if __name__ == "__main__":
    main()
