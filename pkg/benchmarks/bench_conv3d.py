"""Time the compiled conv3d kernels against the NumPy fallback.

Runs forward, backward-input, and backward-weight on a few shapes drawn
from the small encoder preset and prints one table row per (shape, op)
with the speedup of the compiled path.

    python benchmarks/bench_conv3d.py [--repeats N] [--dtype {float32,float64}]
"""

import argparse
import time

import numpy as np

from stclr import kernels
from stclr.encoder import intermediate_channels

_N_STEM = intermediate_channels(3, 8, 3, 7)
_N_S1 = intermediate_channels(8, 8, 3, 3)
_N_S3 = intermediate_channels(16, 32, 3, 3)

# (label, x_shape, w_shape, stride, padding) drawn from tiny-preset layers
SHAPES = [
    ("stem spatial", (4, 3, 8, 32, 32), (_N_STEM, 3, 1, 7, 7), (1, 2, 2), (0, 3, 3)),
    ("stage1 spatial", (4, 8, 8, 16, 16), (_N_S1, 8, 1, 3, 3), (1, 1, 1), (0, 1, 1)),
    ("stage1 temporal", (4, _N_S1, 8, 16, 16), (8, _N_S1, 3, 1, 1), (1, 1, 1), (1, 0, 0)),
    ("stage3 strided", (4, 16, 8, 16, 16), (_N_S3, 16, 1, 3, 3), (1, 2, 2), (0, 1, 1)),
]


def time_op(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeats, dtype):
    rng = np.random.default_rng(0)
    rows = []
    for label, xs, ws, stride, padding in SHAPES:
        x = rng.standard_normal(xs).astype(dtype)
        w = rng.standard_normal(ws).astype(dtype)
        b = rng.standard_normal(ws[0]).astype(dtype)
        out_shape = kernels.conv3d_output_shape(xs, ws, stride, padding)
        g = rng.standard_normal(out_shape).astype(dtype)
        ops = [
            ("forward", lambda: kernels.conv3d_forward(x, w, b, stride, padding)),
            ("grad_in", lambda: kernels.conv3d_backward_input(g, w, xs, stride, padding)),
            ("grad_w", lambda: kernels.conv3d_backward_weight(x, g, ws, stride, padding)),
        ]
        for op_name, fn in ops:
            timings = {}
            for backend in kernels.available_backends():
                kernels.set_backend(backend)
                fn()  # warm up
                timings[backend] = time_op(fn, repeats)
            rows.append((label, op_name, timings))
    kernels.set_backend("auto")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not available; timing numpy only")

    rows = run(args.repeats, np.dtype(args.dtype))
    header = f"{'shape':<16} {'op':<8} " + " ".join(f"{b + ' (ms)':>14}" for b in backends)
    if len(backends) > 1:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, op_name, timings in rows:
        cells = " ".join(f"{timings[b] * 1e3:>14.2f}" for b in backends)
        line = f"{label:<16} {op_name:<8} {cells}"
        if "cython" in timings and "numpy" in timings:
            line += f" {timings['numpy'] / timings['cython']:>8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
