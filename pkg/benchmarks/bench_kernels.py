"""Time the numba kernels against their numpy counterparts.

Run with ``python benchmarks/bench_kernels.py``. Both variants are imported
directly, so the ``FAIRIMPROVE_DISABLE_NUMBA`` flag does not matter here.
The first numba call (compilation or cache load) is excluded from timing.
"""

import argparse
import timeit

import numpy as np

from fairimprove._accel import HAVE_NUMBA
from fairimprove.kernels import lasso_cd_numba, lasso_cd_numpy, resample_sums_numba, resample_sums_numpy


def resample_case(n, cols, Q, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, cols))
    idx = rng.integers(0, n, size=(Q, n))
    return values, idx


def lasso_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X[:, :3] @ np.array([1.0, -0.5, 0.25]) + rng.normal(size=n)
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    gram = X.T @ X / n
    xty = X.T @ (y - y.mean()) / n
    return gram, xty, 0.01, np.zeros(p), 1e-10, 10_000


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    cases = [
        ("resample_sums n=500  C=16 Q=500", resample_sums_numpy, resample_sums_numba, resample_case(500, 16, 500)),
        ("resample_sums n=2000 C=16 Q=1000", resample_sums_numpy, resample_sums_numba, resample_case(2000, 16, 1000)),
        ("lasso_cd      n=2000 p=12", lasso_cd_numpy, lasso_cd_numba, lasso_case(2000, 12)),
        ("lasso_cd      n=2000 p=50", lasso_cd_numpy, lasso_cd_numba, lasso_case(2000, 50)),
    ]
    print(f"{'kernel':34s} {'numpy (ms)':>11s} {'numba (ms)':>11s} {'speedup':>8s}  agree")
    for label, slow, fast, case in cases:
        ref, got = slow(*case), fast(*case)
        if isinstance(ref, tuple):
            ref, got = ref[0], got[0]
        agree = np.allclose(ref, got, rtol=1e-9, atol=1e-9)
        t_np = best_of(slow, case, args.repeat)
        t_nb = best_of(fast, case, args.repeat)
        print(f"{label:34s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
