"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--reps N]

Covers the three hot paths: 3x3x3 convolution forward/backward, 2x max
pooling, and trilinear sampling. Results are wall-clock medians; the two
backends are also cross-checked for numerical agreement.
"""

import argparse
import time

import numpy as np

from synthbrain.kernels import _numba, _numpy


def median_time(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return sorted(times)[len(times) // 2]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--reps", type=int, default=9)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 32, 32, 32)).astype(np.float32)
    w = rng.standard_normal((8, 8, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(8).astype(np.float32)
    gy = rng.standard_normal((8, 32, 32, 32)).astype(np.float32)
    vol = rng.standard_normal((64, 64, 64)).astype(np.float32)
    n = 64 ** 3
    cx = rng.uniform(0, 63, n)
    cy = rng.uniform(0, 63, n)
    cz = rng.uniform(0, 63, n)

    cases = [
        ("conv3d_forward 8ch 32^3",
         lambda k: k.conv3d_forward(x, w, b)),
        ("conv3d_backward 8ch 32^3",
         lambda k: k.conv3d_backward(x, w, gy)),
        ("maxpool2_forward 8ch 32^3",
         lambda k: k.maxpool2_forward(x)),
        ("sample_trilinear 64^3",
         lambda k: k.sample_trilinear(vol, cx, cy, cz)),
    ]

    # warm the jit cache before timing
    for _, fn in cases:
        fn(_numba)

    print(f"{'kernel':34} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, fn in cases:
        t_np = median_time(lambda: fn(_numpy), args.reps)
        t_nb = median_time(lambda: fn(_numba), args.reps)
        print(f"{name:34} {t_np * 1e3:8.2f}ms {t_nb * 1e3:8.2f}ms "
              f"{t_np / t_nb:7.2f}x")

    # agreement check
    y_np = _numpy.conv3d_forward(x, w, b)
    y_nb = _numba.conv3d_forward(x, w, b)
    rel = np.abs(y_np - y_nb).max() / np.abs(y_np).max()
    print(f"\nconv forward max relative difference: {rel:.2e}")


if __name__ == "__main__":
    main()
