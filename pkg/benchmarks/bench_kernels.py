"""Time the compiled queue kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--jobs N] [--load RHO] [--repeat K]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from queuetoll.simulator import kernels


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--jobs", type=int, default=200_000)
    ap.add_argument("--load", type=float, default=0.8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    arrivals = np.cumsum(rng.exponential(1.0 / args.load, args.jobs))
    service = rng.exponential(1.0, args.jobs)

    print(f"compiled backend available: {kernels.BACKEND == 'compiled'}")
    print(f"{'discipline':<10} {'compiled s':>11} {'python s':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fast in kernels.KERNELS.items():
        slow = kernels.PY_KERNELS[name]
        t_fast = min(timeit.repeat(lambda: fast(arrivals, service), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: slow(arrivals, service), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(fast(arrivals, service) - slow(arrivals, service))))
        print(f"{name:<10} {t_fast:>11.4f} {t_slow:>10.4f} {t_slow / t_fast:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
