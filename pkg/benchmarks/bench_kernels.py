"""Time the compiled attention scans against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--lengths 64,256,1024] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from momentum_arch import _kernels_py

try:
    from momentum_arch import _kernels as compiled
except ImportError:
    compiled = None

SCANS = {
    "causal_linear_scan": (),
    "causal_momentum_scan": (0.6, 1.0),
    "momentum_carry_scan": (0.6, 1.0),
}


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", default="64,256,1024")
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not available; only the numpy backend can run")
    rng = np.random.default_rng(0)
    print(f"{'scan':<22}{'N':>6}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for n in (int(x) for x in args.lengths.split(",")):
        fq = np.exp(rng.normal(size=(n, args.dim)))
        fk = np.exp(rng.normal(size=(n, args.dim)))
        v = rng.normal(size=(n, args.dim))
        for name, extra in SCANS.items():
            call_args = (fq, fk, v) + extra
            t_py = best_time(getattr(_kernels_py, name), call_args, args.repeat)
            if compiled is None:
                print(f"{name:<22}{n:>6}{t_py * 1e3:>12.3f}{'-':>12}{'-':>10}")
                continue
            t_c = best_time(getattr(compiled, name), call_args, args.repeat)
            print(f"{name:<22}{n:>6}{t_py * 1e3:>12.3f}{t_c * 1e3:>12.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
