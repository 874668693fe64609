"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude the first (compiling) call. Each row also reports the
largest absolute difference between the two backends' outputs.
"""
import argparse
import timeit

import numpy as np

from smelter.kernels import numba_impl, numpy_impl


def cases(rng):
    x = rng.standard_normal((8, 64, 56, 56)).astype(np.float32)
    cols = numpy_impl.im2col(x, 3, 3, 1, 1)
    pooled, arg = numpy_impl.maxpool2x2(x)
    img = rng.uniform(0, 255, (256, 256, 3))
    m = np.array([[0.9, -0.2, 30.0], [0.2, 0.9, -10.0]])
    kernel = np.exp(-0.5 * (np.arange(-12, 13) / 3.0) ** 2)
    kernel /= kernel.sum()
    return [
        ("im2col 8x64x56x56", "im2col", (x, 3, 3, 1, 1)),
        ("col2im 8x64x56x56", "col2im", (cols, 8, 64, 56, 56, 3, 3, 1, 1)),
        ("maxpool2x2 8x64x56x56", "maxpool2x2", (x,)),
        ("maxpool2x2_backward", "maxpool2x2_backward", (np.ones_like(pooled), arg)),
        ("warp_bilinear 256x256x3", "warp_bilinear", (img, m, 256, 256)),
        ("convolve_rows 256x256x3 k=25", "convolve_rows", (img, kernel)),
    ]


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(p, q) for p, q in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max |diff|':>12}")
    for label, name, fargs in cases(rng):
        f_np = getattr(numpy_impl, name)
        f_nb = getattr(numba_impl, name)
        diff = _diff(f_np(*fargs), f_nb(*fargs))  # also triggers compilation
        t_np = min(timeit.repeat(lambda: f_np(*fargs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*fargs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<32}{t_np:>10.2f}{t_nb:>10.2f}{t_np / t_nb:>8.1f}x{diff:>12.3g}")


if __name__ == "__main__":
    main()
