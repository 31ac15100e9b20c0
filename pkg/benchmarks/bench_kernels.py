"""Throughput comparison of the numba and numpy kernel backends.

Runs each hot kernel on representative inputs under both backends and prints
a table of per-call times and speedups. The backend dispatch is import-time,
so the numpy path is exercised by calling the private ``_np`` implementations
directly while the public entry points use whatever ``RESTYLEADV_NUMBA``
selected (numba by default).

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from restyleadv import kernels


def timeit(fn, repeats):
    fn()  # warm-up (includes jit compilation)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    grid = rng.uniform(size=(64, 64))
    frame = rng.uniform(size=(128, 128, 3))
    flow = rng.uniform(-3, 3, size=(128, 128, 2))
    img = rng.uniform(size=(64, 64, 3))

    cases = [
        ("bilinear_resize 64->256",
         lambda: kernels._bilinear_resize_jit(grid, 256, 256) if kernels.USE_NUMBA
         else None,
         lambda: kernels._bilinear_resize_np(grid, 256, 256)),
        ("warp_backward 128x128",
         lambda: kernels._warp_backward_jit(frame, flow) if kernels.USE_NUMBA
         else None,
         lambda: kernels._warp_backward_np(frame, flow)),
        ("tv_loss_and_grad 128x128",
         lambda: kernels._tv_jit(frame) if kernels.USE_NUMBA else None,
         lambda: kernels._tv_np(frame)),
        ("matting_entries 64x64",
         lambda: kernels._matting_entries_jit(img, 1, 1e-7) if kernels.USE_NUMBA
         else None,
         lambda: kernels._matting_entries_np(img, 1, 1e-7)),
    ]

    print(f"active backend: {kernels.backend_name()}")
    print(f"{'kernel':<28}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, jit_fn, np_fn in cases:
        t_np = timeit(np_fn, args.repeats) * 1e3
        if kernels.USE_NUMBA:
            t_jit = timeit(jit_fn, args.repeats) * 1e3
            print(f"{name:<28}{t_jit:>12.3f}{t_np:>12.3f}{t_np / t_jit:>9.1f}x")
        else:
            print(f"{name:<28}{'-':>12}{t_np:>12.3f}{'-':>10}")


if __name__ == "__main__":
    main()
