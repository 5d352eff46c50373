"""Time the compiled kernels against the pure-Python fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--scale 1.0] [--repeats 3]

Prints one row per kernel with the best wall time of each backend and the
speed-up. ``--scale`` shrinks or grows every problem size.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lsrom import kernels


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale: float, rng: np.random.Generator):
    n = max(100, int(20_000 * scale))
    pts = rng.random((n, 2))
    centers = rng.random((100, 2))
    yield f"assign_nearest n={n} q=100", lambda b: kernels.assign_nearest(pts, centers, backend=b)

    q = 100
    grid = np.stack(np.meshgrid(np.arange(10.0), np.arange(10.0)), -1).reshape(-1, 2)
    gd2 = ((grid[:, None] - grid[None]) ** 2).sum(-1)
    steps = max(100, int(20_000 * scale))
    order = rng.integers(0, n, steps)

    def som(b):
        w = np.ascontiguousarray(pts[:q].copy())
        kernels.som_train(pts, w, gd2, order, 0, steps, 0.5, 0.01, 0.5, 0.01, backend=b)
    yield f"som_train steps={steps} q={q}", som

    m = max(100, int(2_000 * scale))
    sub = pts[:m]
    levels = np.minimum(rng.geometric(1 - 1 / np.e, m) - 1, 4)
    yield f"hnsw_graph build m={m}", lambda b: kernels.hnsw_graph(sub, levels, 16, 100, backend=b)

    nbr = rng.integers(0, n, (n, 24))
    scope = rng.random(n) < 0.8
    target = scope & (rng.random(n) < 0.3)
    yield f"count_foreign rows={n} kappa=10", \
        lambda b: kernels.count_foreign(nbr, scope, target, 10, backend=b)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled kernels unavailable; build with `pip install -e .`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'python s':>12}{'compiled s':>12}{'speed-up':>10}")
    for name, fn in cases(args.scale, rng):
        py = best_of(lambda: fn("python"), max(1, args.repeats // 3))
        c = best_of(lambda: fn("compiled"), args.repeats)
        print(f"{name:<34}{py:>12.4f}{c:>12.4f}{py / c:>10.1f}x")


if __name__ == "__main__":
    main()
