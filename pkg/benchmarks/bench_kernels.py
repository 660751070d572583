"""Time the compiled CRC-64 against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--mb 4] [--repeat 3]

The Python loop is slow, so it runs on a smaller slice and the rate is
reported in MB/s for both.
"""
import argparse
import timeit

import numpy as np

from widesense import _pykernels, kernels


def rate(fn, data, repeat):
    best = min(timeit.repeat(lambda: fn(data), number=1, repeat=repeat))
    return len(data) / best / 1e6, best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mb", type=float, default=4.0, help="payload size for the compiled kernel")
    ap.add_argument("--py-mb", type=float, default=0.25, help="payload size for the Python kernel")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    big = rng.integers(0, 256, int(args.mb * 1e6), dtype=np.uint8).tobytes()
    small = big[: int(args.py_mb * 1e6)]
    assert kernels.crc64(small) == _pykernels.crc64(small)

    print(f"active backend: {kernels.BACKEND}")
    fast, t_fast = rate(kernels.crc64, big, args.repeat)
    slow, t_slow = rate(_pykernels.crc64, small, args.repeat)
    print(f"{kernels.BACKEND:>8}: {fast:10.2f} MB/s  ({args.mb:g} MB in {t_fast:.4f} s)")
    print(f"{'python':>8}: {slow:10.2f} MB/s  ({args.py_mb:g} MB in {t_slow:.4f} s)")
    print(f"speedup: {fast / slow:.0f}x")


if __name__ == "__main__":
    main()
