"""Numba vs NumPy timings for the tree kernels.

    python benchmarks/bench_kernels.py [--n 250 5000] [--repeat 5]

Both paths grow bit-identical trees; the table reports the best of
``--repeat`` wall-clock runs after one warm-up call (which absorbs JIT time).
"""
import argparse
import time

import numpy as np

from edgetran import _kernels as K
from edgetran import regressors as R


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, nargs="+", default=[250, 2000, 10000])
    ap.add_argument("--d", type=int, default=37)
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--trees", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if K.grow_tree_numba is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>7}{'numpy [ms]':>13}{'numba [ms]':>13}{'speedup':>9}")
    for n in args.n:
        X = rng.random((n, args.d))
        y = np.sin(6 * X[:, 0]) + X[:, 1] * X[:, 2]
        b = R.make_bins(X, 64)
        grow = (b.codes, y, b.n_bins, b.max_bins, args.depth, 2)
        ref = K.grow_tree_numpy(*grow)
        out = K.grow_tree_numba(*grow)
        assert all(np.array_equal(a, c) for a, c in zip(ref, out)), "kernels disagree"
        t_np = best_of(lambda: K.grow_tree_numpy(*grow), args.repeat)
        t_nb = best_of(lambda: K.grow_tree_numba(*grow), args.repeat)
        print(f"{'grow_tree':<16}{n:>7}{1e3 * t_np:>13.3f}{1e3 * t_nb:>13.3f}{t_np / t_nb:>9.1f}")

        model = R.GBDTRegressor({"n_trees": args.trees, "max_depth": args.depth}).fit(X, y)
        flat = (*model._flat, np.ascontiguousarray(X))
        assert np.allclose(K.forest_predict_numpy(*flat), K.forest_predict_numba(*flat), rtol=0, atol=0)
        t_np = best_of(lambda: K.forest_predict_numpy(*flat), args.repeat)
        t_nb = best_of(lambda: K.forest_predict_numba(*flat), args.repeat)
        print(f"{'forest_predict':<16}{n:>7}{1e3 * t_np:>13.3f}{1e3 * t_nb:>13.3f}{t_np / t_nb:>9.1f}")


if __name__ == "__main__":
    main()
