"""Compare the numba and numpy implementations of the pairwise kernels.

    python3 benchmarks/bench_kernels.py [--sizes 64 256 1024] [--dim 2] [--repeat 5]

Prints the best-of-``repeat`` wall time per call and the largest difference
between the two results. The first numba call (compilation or cache load)
is excluded.
"""
import argparse
import time

import numpy as np

from cskuramoto import _pairwise
from cskuramoto._accel import HAVE_NUMBA


def _args(name, x, y, w, alpha, eps):
    if name == "grad_conv":
        return (x, x, w, alpha, eps)
    if name == "interaction_sum":
        return (x, w, alpha, eps)
    if name == "alignment_force":
        return (x, y, w, alpha, eps)
    return (x, y, w, alpha, eps)  # enstrophy_sum, flow


def _best(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(p, q) for p, q in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--eps", type=float, default=0.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path can run")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'N':>6}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max diff':>12}")
    for n in args.sizes:
        x = rng.uniform(-1, 1, (n, args.dim))
        y = rng.uniform(-1, 1, (n, args.dim))
        w = np.full(n, 1.0 / n)
        for name, (nb, py) in _pairwise.IMPLEMENTATIONS.items():
            call = _args(name, x, y, w, args.alpha, args.eps)
            t_np, r_np = _best(py, call, args.repeat)
            if HAVE_NUMBA:
                nb(*call)  # compile / load from cache
                t_nb, r_nb = _best(nb, call, args.repeat)
                diff = _max_diff(r_nb, r_np)
                print(f"{name:<16}{n:>6}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>10.1f}{diff:>12.2e}")
            else:
                print(f"{name:<16}{n:>6}{'-':>12}{t_np * 1e3:>12.3f}{'-':>10}{'-':>12}")


if __name__ == "__main__":
    main()
