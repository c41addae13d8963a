"""Time the compiled kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs under both backends; outputs are checked
for equality before timings are printed.
"""
import argparse
import timeit

import numpy as np

from ckge import _kernels_py, kernels

try:
    from ckge import _kernels as compiled
except ImportError:
    compiled = None


def _inputs(rng):
    q = rng.normal(size=(512, 64))
    cand = rng.normal(size=(5000, 64))
    n_q, n_c = 4000, 5000
    scores = rng.normal(size=(n_q, n_c))
    true_idx = rng.integers(0, n_c, size=n_q)
    split = np.full(n_q, 3000)
    n_cand = np.full(n_q, n_c)
    lens = rng.integers(0, 20, size=n_q)
    excl_ptr = np.concatenate([[0], np.cumsum(lens)])
    excl_idx = rng.integers(0, n_c, size=int(excl_ptr[-1]))
    rows = rng.integers(0, 20_000, size=200_000)
    vals = rng.normal(size=(200_000, 32))
    return {
        "neg_distances L2 (512x5000, d=64)": lambda impl: kernels.neg_distances(q, cand, 2, impl),
        "neg_distances L1 (512x5000, d=64)": lambda impl: kernels.neg_distances(q, cand, 1, impl),
        "count_better (4000 queries x 5000)": lambda impl: kernels.count_better(
            scores, true_idx, split, n_cand, excl_ptr, excl_idx, impl),
        "scatter_add_rows (200k rows, w=32)": lambda impl: kernels.scatter_add_rows(rows, vals, 20_000, impl),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    cases = _inputs(np.random.default_rng(0))
    print(f"{'kernel':40s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        if not _same(fn(_kernels_py), fn(compiled)):
            print(f"{name}: backends disagree")
            return 1
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat))
        print(f"{name:40s} {1e3 * t_py:10.1f} {1e3 * t_cy:10.1f} {t_py / t_cy:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
