"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs both backends in-process on representative workloads, checks that they
agree numerically, and prints a timing table. The package itself selects a
backend once at import from DEEPSPECTRAL_NUMBA; this script calls the two
implementations directly.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from deepspectral import _kernels as K


def timeit(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_csr_matvec(rng, repeats):
    n, per_row = 4096, 40
    rows = np.repeat(np.arange(n), per_row)
    cols = rng.integers(0, n, n * per_row)
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    vals = rng.standard_normal(n * per_row)
    indptr = np.zeros(n + 1, np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    x = rng.standard_normal(n)
    K._csr_matvec_nb(indptr, cols, vals, x)  # compile
    t_nb, out_nb = timeit(lambda: K._csr_matvec_nb(indptr, cols, vals, x), repeats)
    t_np, out_np = timeit(lambda: K._csr_matvec_np(indptr, cols, vals, x), repeats)
    return "csr_matvec (n=4096, 40/row)", t_nb, t_np, np.abs(out_nb - out_np).max()


def bench_gaussian(rng, repeats):
    q = rng.random((2, 128, 128))
    q /= q.sum(axis=0)
    radius, inv2s = 9, 1.0 / (2 * 3.0**2)
    K._gaussian_message_nb(q, radius, inv2s)
    t_nb, out_nb = timeit(lambda: K._gaussian_message_nb(q, radius, inv2s), repeats)
    t_np, out_np = timeit(lambda: K._gaussian_message_np(q, radius, inv2s), repeats)
    return "gaussian_message (2x128x128, r=9)", t_nb, t_np, np.abs(out_nb - out_np).max()


def bench_bilateral(rng, repeats):
    q = rng.random((2, 48, 48))
    q /= q.sum(axis=0)
    rgb = rng.integers(0, 256, (48, 48, 3)).astype(np.int64)
    radius = 240  # clipped to the image; full-image window
    inv2sx, inv2sr = 1.0 / (2 * 80.0**2), 1.0 / (2 * 13.0**2)
    K._bilateral_message_nb(q, rgb, radius, inv2sx, inv2sr)
    t_nb, out_nb = timeit(lambda: K._bilateral_message_nb(q, rgb, radius, inv2sx, inv2sr), repeats)
    t_np, out_np = timeit(lambda: K._bilateral_message_np(q, rgb, radius, inv2sx, inv2sr), repeats)
    return "bilateral_message (2x48x48, full window)", t_nb, t_np, np.abs(out_nb - out_np).max()


def bench_label_components(rng, repeats):
    mask = (rng.random((512, 512)) < 0.55).astype(np.uint8)
    K._label_components_nb(mask)
    t_nb, out_nb = timeit(lambda: K._label_components_nb(mask), repeats)
    t_np, out_np = timeit(lambda: K._label_components_np(mask), repeats)
    # Label ids may differ between backends; compare component structure.
    same = (out_nb > 0).sum() == (out_np > 0).sum() and \
        len(np.unique(out_nb)) == len(np.unique(out_np))
    return "label_components (512x512)", t_nb, t_np, 0.0 if same else np.inf


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not K.NUMBA_ENABLED:
        raise SystemExit("numba backend unavailable (or disabled by "
                         "DEEPSPECTRAL_NUMBA=0); nothing to compare")

    rng = np.random.default_rng(0)
    rows = [
        bench_csr_matvec(rng, args.repeats),
        bench_gaussian(rng, args.repeats),
        bench_bilateral(rng, args.repeats),
        bench_label_components(rng, args.repeats),
    ]
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}  {'max|diff|':>10}")
    for name, t_nb, t_np, diff in rows:
        print(f"{name:<{width}}  {t_nb * 1e3:>8.2f}ms  {t_np * 1e3:>8.2f}ms  "
              f"{t_np / t_nb:>7.1f}x  {diff:>10.2e}")


if __name__ == "__main__":
    main()
