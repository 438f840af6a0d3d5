"""Compare the numba and numpy paths of the hot kernels.

    python3 benchmarks/bench_kernels.py [--events 20000] [--samples 20000] [--repeat 5]

Both paths are checked for identical output before timing.  The first numba
call (compilation, or loading the on-disk cache) is timed separately.
"""
import argparse
import time

import numpy as np

from transona import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def accumulate_inputs(n, codes, rng):
    times = np.sort(rng.integers(0, n * 2000, n)).astype(np.int64)
    windows = rng.choice([5000, 10000, 15000, 20000], n).astype(np.int64)
    members = (rng.random((n, codes)) < 0.25).astype(np.uint8)
    members[np.arange(n), rng.integers(0, codes, n)] = 1
    return times, windows, members


def stop_inputs(n, rng):
    pos, xs, ys = np.zeros(2), np.empty(n), np.empty(n)
    for i in range(n):
        if rng.random() < 0.02:
            pos = rng.uniform(-8000, 8000, 2)
        xs[i], ys[i] = pos + rng.normal(0, 150, 2)
    return np.arange(n, dtype=np.int64) * 1000, xs, ys


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=20000)
    ap.add_argument("--codes", type=int, default=10)
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    rng = np.random.default_rng(a.seed)

    acc = accumulate_inputs(a.events, a.codes, rng)
    stops = stop_inputs(a.samples, rng)
    cases = [
        ("accumulate (multiplicity)", lambda f: f(*acc, False),
         _kernels.accumulate_counts_numba, _kernels.accumulate_counts_numpy),
        ("accumulate (binary)", lambda f: f(*acc, True),
         _kernels.accumulate_counts_numba, _kernels.accumulate_counts_numpy),
        ("stop segments", lambda f: f(*stops, 1000.0, 10_000),
         _kernels.stop_segments_numba, _kernels.stop_segments_numpy),
    ]

    print(f"events={a.events} codes={a.codes} samples={a.samples} best of {a.repeat}")
    print(f"{'kernel':28s} {'first numba':>12s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, call, fast, slow in cases:
        t0 = time.perf_counter()
        got = call(fast)
        first = time.perf_counter() - t0
        ref = call(slow)
        same = all(np.array_equal(x, y) for x, y in zip(got, ref)) if isinstance(got, tuple) \
            else np.array_equal(got, ref)
        if not same:
            raise SystemExit(f"{name}: numba and numpy paths disagree")
        tf = best_of(lambda: call(fast), a.repeat)
        ts = best_of(lambda: call(slow), a.repeat)
        print(f"{name:28s} {first:11.3f}s {tf:9.4f}s {ts:9.4f}s {ts / tf:7.1f}x")


if __name__ == "__main__":
    main()
