#!/usr/bin/env python3
"""Benchmark the compiled top-k kernel against the pure-NumPy fallback.

Generates a synthetic corpus, runs each available backend several times, and
reports per-query latency plus peak transient memory. Both backends must
return identical results; the benchmark aborts if they ever disagree.

The NumPy fallback leans on BLAS and usually wins raw matmul throughput;
the compiled kernel streams the corpus once with a bounded working set
instead of materializing the full float64 affinity matrix, which is what
matters as the corpus grows.

Usage:
    python benchmarks/bench_topk.py --tokens 200000 --dim 128 --k 100
"""

import argparse
import time
import tracemalloc

import numpy as np

from xtr import kernels


def bench(fn, corpus, queries, k, repeats):
    times = []
    result = None
    tracemalloc.start()
    tracemalloc.reset_peak()
    result = fn(corpus, queries, k)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn(corpus, queries, k)
        times.append(time.perf_counter() - start)
    return min(times), peak, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tokens", type=int, default=200_000)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--queries", type=int, default=16)
    parser.add_argument("--k", type=int, default=100)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    corpus = rng.normal(size=(args.tokens, args.dim)).astype(np.float32)
    corpus /= np.linalg.norm(corpus, axis=1, keepdims=True)
    queries = rng.normal(size=(args.queries, args.dim)).astype(np.float32)
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)

    backends = kernels.available_backends()
    print(f"corpus: {args.tokens} tokens x {args.dim} dims, "
          f"{args.queries} query tokens, k={args.k}, "
          f"best of {args.repeats}")
    print(f"{'backend':<10} {'total (ms)':>12} {'per query (ms)':>16} "
          f"{'peak mem (MB)':>15}")

    results = {}
    timings = {}
    for name, fn in sorted(backends.items()):
        elapsed, peak, result = bench(fn, corpus, queries, args.k,
                                      args.repeats)
        results[name] = result
        timings[name] = elapsed
        print(f"{name:<10} {elapsed * 1e3:>12.2f} "
              f"{elapsed * 1e3 / args.queries:>16.3f} "
              f"{peak / 1e6:>15.1f}")

    names = sorted(results)
    for other in names[1:]:
        if not (np.array_equal(results[other][0], results[names[0]][0])
                and np.array_equal(results[other][1], results[names[0]][1])):
            raise SystemExit("backends disagree; benchmark is invalid")
    if len(names) == 2:
        slow, fast = max(timings, key=timings.get), min(timings, key=timings.get)
        print(f"\n{fast} is {timings[slow] / timings[fast]:.1f}x faster "
              f"than {slow}; outputs identical")


if __name__ == "__main__":
    main()
