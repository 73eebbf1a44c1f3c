"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--K 520] [--N 2000] [--T 50] [--repeat 20]

The numba side is only timed when numba imports and LCSPARSE_DISABLE_NUMBA is unset.
"""
import argparse
import timeit

import numpy as np

from lcsparse import _kernels


def bench(fn, repeat):
    fn()  # warm-up / JIT compile
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=520)
    ap.add_argument("--N", type=int, default=2000)
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    V = np.random.default_rng(0).standard_normal((args.K, args.N))
    cases = {
        "topk_mask": (lambda: _kernels.topk_mask_numpy(V, args.T), lambda: _kernels.topk_mask(V, args.T)),
        "soft_threshold": (lambda: _kernels.soft_threshold_numpy(V, 0.5), lambda: _kernels.soft_threshold(V, 0.5)),
    }
    print(f"K={args.K} N={args.N} T={args.T} numba={'on' if _kernels.HAS_NUMBA else 'off'}")
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  same")
    for name, (ref, fast) in cases.items():
        t_np = bench(ref, args.repeat)
        if _kernels.HAS_NUMBA:
            t_nb = bench(fast, args.repeat)
            same = np.array_equal(ref(), fast())
            print(f"{name:<16}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x  {same}")
        else:
            print(f"{name:<16}{t_np * 1e3:>10.2f}{'-':>10}{'-':>9}  -")


if __name__ == "__main__":
    main()
