"""Time the compiled and numpy kernel backends on representative sizes.

Run with ``python3 benchmarks/bench_kernels.py``.
"""
import argparse
import timeit

import numpy as np

from fracpredict import kernels


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    r = np.random.default_rng(0)

    cases = []
    n, m = 1024, 4096
    phi, c, g = np.full(m, 0.99), np.zeros(m), np.full(m, 0.1)
    dB = r.normal(size=(n, m))
    cases.append((f"ar_scan {n}x{m}", lambda b: kernels.ar_scan(phi, c, g, dB, 0.0, backend=b)))

    v = r.uniform(0, 5, 2 ** 14)
    z = r.uniform(5, 10, 64)
    w = r.normal(size=64)
    cases.append((f"pole_sums {v.size}x{z.size}", lambda b: kernels.pole_sums(v, z, w, backend=b)))

    print(f"{'kernel':<24}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for name, fn in cases:
        tp = _best(lambda: fn("python"), args.repeat)
        tc = _best(lambda: fn("cython"), args.repeat)
        print(f"{name:<24}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
