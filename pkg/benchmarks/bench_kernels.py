"""Compare the compiled kernels with the interpreter fallback.

    python benchmarks/bench_kernels.py [--events 10000000]
"""

import argparse
import time

import numpy as np

from votdr import _purepy

try:
    from votdr import _kernels
except ImportError:
    _kernels = None


def _events(n, rng):
    # clustered arrivals: about a third fall inside the dead time of their predecessor
    groups = np.sort(rng.integers(0, max(1, n // 50), n)).astype(np.int64)
    gaps = rng.exponential(100_000.0, n)
    times = np.empty(n, np.int64)
    starts = np.flatnonzero(np.r_[True, groups[1:] != groups[:-1]])
    ends = np.r_[starts[1:], n]
    csum = np.cumsum(gaps)
    for a, b in zip(starts, ends):
        times[a:b] = (csum[a:b] - csum[a] + gaps[a]).astype(np.int64)
    return times, groups


def _time(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=10_000_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    times, groups = _events(args.events, rng)
    dead = 60_000.0
    backends = [("python", _purepy)] + ([("compiled", _kernels)] if _kernels else [])

    print(f"{args.events} events")
    results = {}
    for name, mod in backends:
        t, mask = _time(mod.dead_time_mask, times, groups, dead, False)
        results[name] = mask
        print(f"dead_time_mask  {name:<9s} {t * 1e3:9.1f} ms  {args.events / t / 1e6:7.1f} Mev/s")
    for name, mod in backends:
        t, _ = _time(mod.histogram, times, 1000, 1 << 20)
        print(f"histogram       {name:<9s} {t * 1e3:9.1f} ms  {args.events / t / 1e6:7.1f} Mev/s")
    if len(results) == 2:
        same = np.array_equal(results["python"], results["compiled"])
        print(f"masks identical: {same}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
