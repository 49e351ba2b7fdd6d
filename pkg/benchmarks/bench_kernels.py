#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallbacks.

Run with defaults (benchmark-sized shapes) or adjust via flags:

    python benchmarks/bench_kernels.py --clips 2000 --filters 64 --repeats 20

Both code paths always run in-process; the PATTERNCONV_NO_NUMBA environment
variable only affects which one the package dispatches to at import time.
"""

import argparse
import time

import numpy as np

from patternconv import kernels


def _time(fn, *args, repeats=10):
    fn(*args)  # warm-up (numba compilation, caches)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clips", type=int, default=2000)
    ap.add_argument("--filters", type=int, default=64)
    ap.add_argument("--clip-length", type=int, default=5)
    ap.add_argument("--features", type=int, default=13)
    ap.add_argument("--kernel", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    B, M, L, d, k = (args.clips, args.filters, args.clip_length,
                     args.features, args.kernel)
    X = (rng.random((B, L, d)) < 0.25).astype(np.uint8)
    Xp = kernels.pad_clips(X, 1)
    Xp_f = Xp.astype(np.float64)
    W = rng.random((M, k, d))
    cells = (rng.random((M, k, d)) < 0.2).astype(np.uint8)
    C = Xp.shape[1] - k + 1
    dh = rng.standard_normal((B, M, C))

    cases = [
        ("conv_forward", kernels._conv_forward_np, (W, Xp_f)),
        ("conv_backward", kernels._conv_backward_np, (dh, Xp_f, k)),
        ("match_first_window", kernels._match_first_window_np, (cells, Xp)),
    ]
    if kernels.USE_NUMBA:
        nb = [kernels._conv_forward_nb, kernels._conv_backward_nb,
              kernels._match_first_window_nb]
    else:
        nb = [None] * 3

    print(f"B={B} M={M} L={L} d={d} k={k}  (numba available: {kernels.USE_NUMBA})")
    print(f"{'kernel':<20} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for (name, np_fn, a), nb_fn in zip(cases, nb):
        t_np = _time(np_fn, *a, repeats=args.repeats)
        if nb_fn is None:
            print(f"{name:<20} {t_np * 1e3:>10.2f}ms {'-':>12} {'-':>9}")
            continue
        t_nb = _time(nb_fn, *a, repeats=args.repeats)
        ref, got = np_fn(*a), nb_fn(*a)
        assert np.allclose(ref, got), f"{name}: numba and numpy disagree"
        print(f"{name:<20} {t_np * 1e3:>10.2f}ms {t_nb * 1e3:>10.2f}ms "
              f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
