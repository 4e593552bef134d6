#!/usr/bin/env python3
"""Compare the compiled im2col/col2im kernels against the numpy fallback.

Run: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from bpclip import kernels

CASES = [
    # name, (B, C, H, W), (kh, stride, pad)
    ("stage1 384px", (4, 3, 384, 384), (3, 2, 1)),
    ("stage2 192px", (4, 8, 192, 192), (3, 2, 1)),
    ("stage3 96px", (4, 16, 96, 96), (3, 2, 1)),
    ("bottleneck 48px", (8, 64, 48, 48), (3, 1, 1)),
    ("head 1x1 24px", (8, 128, 24, 24), (1, 1, 0)),
]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    args = parser.parse_args()
    dtype = np.float32 if args.dtype == "f32" else np.float64

    if not kernels.HAVE_COMPILED:
        print("compiled extension not built; nothing to compare "
              "(pip install -e . builds it)")
        return

    print(f"{'case':>18} {'op':>7} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, shape, (k, s, p) in CASES:
        x = np.random.default_rng(0).normal(size=shape).astype(dtype)
        cols_ref = kernels.im2col_numpy(x, k, k, s, s, p, p)
        cols = np.ascontiguousarray(cols_ref)

        t_np = best_of(lambda: kernels.im2col_numpy(x, k, k, s, s, p, p), args.repeats)
        t_cy = best_of(lambda: kernels._compiled.im2col(x, k, k, s, s, p, p), args.repeats)
        assert kernels._compiled.im2col(x, k, k, s, s, p, p).tobytes() == cols_ref.tobytes()
        print(f"{name:>18} {'im2col':>7} {t_np * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms {t_np / t_cy:7.2f}x")

        t_np = best_of(lambda: kernels.col2im_numpy(cols, shape, k, k, s, s, p, p), args.repeats)
        t_cy = best_of(lambda: kernels._compiled.col2im(cols, shape, k, k, s, s, p, p), args.repeats)
        print(f"{name:>18} {'col2im':>7} {t_np * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms {t_np / t_cy:7.2f}x")


if __name__ == "__main__":
    main()
