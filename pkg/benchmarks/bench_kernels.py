"""Time the compiled and pure-Python kernels on pipeline-sized problems.

Usage: python benchmarks/bench_kernels.py [--repeat N]

The two hot loops are the batched Sinkhorn solve of the fine stage (a few
hundred 65 x 65 problems per pair) and RANSAC hypothesis scoring (tens of
thousands of hypotheses against a few thousand correspondences).
"""

import argparse
import timeit

import numpy as np

from coarsefine import _backend, transport
from coarsefine.registration import _hypotheses


def sinkhorn_case(rng, batch=300, k=64):
    scores = rng.normal(scale=3.0, size=(batch, k + 1, k + 1))
    muted = np.zeros(scores.shape, dtype=bool)
    muted[:, k, k] = True
    muted[:, :k][rng.random((batch, k)) < 0.2] = True
    return scores, muted


def inlier_case(rng, n=5000, hyps=2000):
    x = rng.normal(size=(n, 3))
    y = x + rng.normal(scale=0.02, size=(n, 3))
    idx = rng.integers(n, size=(hyps, 3))
    r, t, _ = _hypotheses(x[idx], y[idx])
    return np.ascontiguousarray(x), np.ascontiguousarray(y), r, t


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    scores, muted = sinkhorn_case(rng)
    x, y, r, t = inlier_case(rng)
    found = _backend.backends()
    print(f"default backend: {_backend.NAME}")
    print(f"{'kernel':<16}{'backend':<10}{'best of ' + str(args.repeat):>14}")
    timings = {}
    for name, (sk, ci) in found.items():
        timings[("sinkhorn", name)] = best(
            lambda sk=sk: transport.sinkhorn_many(scores, muted, 100, transport.FINE, 0.0, backend=sk),
            args.repeat)
        timings[("count_inliers", name)] = best(lambda ci=ci: ci(x, y, r, t, 0.05 ** 2), args.repeat)
    for (kernel, name), sec in timings.items():
        print(f"{kernel:<16}{name:<10}{sec * 1e3:>11.1f} ms")
    if "cython" in found:
        for kernel in ("sinkhorn", "count_inliers"):
            speedup = timings[(kernel, "python")] / timings[(kernel, "cython")]
            print(f"{kernel} speed-up: {speedup:.1f}x")


if __name__ == "__main__":
    main()
