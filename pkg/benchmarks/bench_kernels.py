"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--n 100000] [--g 15] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from copula_em import kernels


def cases(n, g, rng):
    centers = np.sort(rng.normal(0, 3, g))
    x = rng.normal(0, 4, n)
    u = rng.random(n)
    k = min(n, 10_000)
    pts = rng.normal(size=(4, k))
    return {
        "mixture_eval": lambda b: b.mixture_eval(x, centers, 0.7, 1e-12),
        "mixture_eval+resp": lambda b: b.mixture_eval(x, centers, 0.7, 1e-12, True),
        "mixture_quantile": lambda b: b.mixture_quantile(u, centers, 0.7),
        f"quadrant_counts (k={k})": lambda b: b.quadrant_counts(*pts),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=100_000, help="points per call")
    ap.add_argument("--g", type=int, default=15, help="mixture components")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled extension not built; only the NumPy fallback is timed")
    rng = np.random.default_rng(0)
    names = list(backends)
    print(f"{'kernel':28s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(args.n, args.g, rng).items():
        times = [min(timeit.repeat(lambda: fn(backends[n]), number=1, repeat=args.repeat)) for n in names]
        row = f"{label:28s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
