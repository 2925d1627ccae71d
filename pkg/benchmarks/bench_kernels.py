"""Timing comparison of the two path-generation backends.

Runs the market-path kernel over a grid of path counts with both the
numba-compiled loop and the pure-numpy fallback, checks the outputs are
bit-identical, and prints a small table.  The first numba call includes JIT
compilation and is timed separately.

Usage: python benchmarks/bench_kernels.py [--paths 1000 10000 ...] [--periods 10]
"""
import argparse
import time

import numpy as np

from rebkyle.kernels import HAVE_NUMBA, simulate_paths
from rebkyle.model import ModelParams
from rebkyle.solver import SolverConfig, shoot


def time_backend(backend, coeffs, v, a, dw, repeats=5):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = simulate_paths(*coeffs, v, a, dw, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, nargs="+",
                    default=[1_000, 10_000, 100_000, 1_000_000])
    ap.add_argument("--periods", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    p = ModelParams(args.periods, 1.0, 1.0, 4.0, 0.0)
    sol = shoot(p, SolverConfig())
    c = {k: np.array(vv) for k, vv in sol.coefficient_arrays().items()}
    coeffs = (c["lam"], c["mu"], c["r"], c["s"], c["beta_i"], c["beta_r"],
              c["alpha_r"])
    rng = np.random.default_rng(args.seed)

    if HAVE_NUMBA:
        v = rng.standard_normal(8)
        a = rng.standard_normal(8)
        dw = rng.standard_normal((8, args.periods))
        t0 = time.perf_counter()
        simulate_paths(*coeffs, v, a, dw, backend="numba")
        print(f"numba warm-up (includes JIT): {time.perf_counter() - t0:.3f} s")
    else:
        print("numba not installed; benchmarking the numpy backend only")

    print(f"{'paths':>10} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>9}")
    for n_paths in args.paths:
        v = rng.standard_normal(n_paths)
        a = rng.standard_normal(n_paths)
        dw = rng.standard_normal((n_paths, args.periods))
        t_np, out_np = time_backend("numpy", coeffs, v, a, dw)
        if HAVE_NUMBA:
            t_nb, out_nb = time_backend("numba", coeffs, v, a, dw)
            identical = all(np.array_equal(x, y)
                            for x, y in zip(out_np, out_nb))
            if not identical:
                raise SystemExit("backends disagree; aborting")
            print(f"{n_paths:>10} {t_np * 1e3:>12.2f} {t_nb * 1e3:>12.2f} "
                  f"{t_np / t_nb:>8.2f}x")
        else:
            print(f"{n_paths:>10} {t_np * 1e3:>12.2f} {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
