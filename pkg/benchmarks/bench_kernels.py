"""Compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints median wall time per call for each backend and the max abs
difference between their outputs.
"""

import argparse
import statistics
import time

import numpy as np

from hermitefilter import _fallback

try:
    from hermitefilter import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def cases():
    rng = np.random.default_rng(0)
    for m, n in [(92, 45), (400, 200), (2000, 500)]:
        t = np.sort(rng.uniform(-np.sqrt(2 * n + 1), np.sqrt(2 * n + 1), m))
        yield f"hermite_table M={m} N={n}", "hermite_table", (t, n)
    for n in [50, 500, 10000, 100000]:
        w = rng.exponential(size=n)
        yield f"systematic_resample n={n}", "systematic_resample", (w / w.sum(), 0.37)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'case':34s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for label, name, a in cases():
        py = getattr(_fallback, name)
        tp = _time(lambda: py(*a), args.repeat)
        if _kernels is None:
            print(f"{label:34s} {1e3 * tp:12.3f}")
            continue
        cy = getattr(_kernels, name)
        tc = _time(lambda: cy(*a), args.repeat)
        diff = np.max(np.abs(np.asarray(py(*a), dtype=float) - np.asarray(cy(*a), dtype=float)))
        print(f"{label:34s} {1e3 * tp:12.3f} {1e3 * tc:12.3f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
