"""Numba kernels vs their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel for both backends and checks that
the two return the same answer. Compile time is excluded by a warm-up call.
"""
import argparse
import time

import numpy as np

from agreemesh import _kernels
from agreemesh._jit import HAVE_NUMBA
from agreemesh.calibration import _outcome_classes


def best_of(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    vals = rng.random(200_000)
    yield "bucket_indices n=37", "bucket_indices", (vals, 37)

    alpha = np.sort(rng.normal(size=5_000))[::-1].copy()
    alpha[-1] = 1.0
    yield "aosa_pair m=5000", "aosa_pair", (alpha,)

    c = np.linspace(-1.0, 1.0, 4_000)
    yield "first_sign_change n=4000", "first_sign_change", (c,)

    p = rng.random(48)
    y = (rng.random(48) < p).astype(np.float64)
    sp, offsets, yvals = _outcome_classes(p, y)
    prefix = np.concatenate(([0.0], np.cumsum(sp)))
    yield "caldist_dp T=48", "caldist_dp", (sp, prefix, offsets, yvals)

    p = rng.random(9)
    y = (rng.random(9) < p).astype(np.float64)
    yield "caldist_partitions T=9", "caldist_partitions", (p, y)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path can be timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':28s} {'numpy [s]':>12s} {'numba [s]':>12s} {'speedup':>9s}")
    for label, name, kargs in cases(rng):
        t_np, r_np = best_of(getattr(_kernels, name + "_np"), kargs, args.repeat)
        if HAVE_NUMBA:
            t_jit, r_jit = best_of(getattr(_kernels, name + "_jit"), kargs, args.repeat)
            if not np.allclose(r_np, r_jit, atol=1e-9):
                raise SystemExit(f"{name}: backends disagree ({r_np!r} vs {r_jit!r})")
            print(f"{label:28s} {t_np:12.6f} {t_jit:12.6f} {t_np / t_jit:8.1f}x")
        else:
            print(f"{label:28s} {t_np:12.6f} {'-':>12s} {'-':>9s}")


if __name__ == "__main__":
    main()
