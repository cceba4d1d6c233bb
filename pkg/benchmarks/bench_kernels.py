#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-Python fallback.

Times medoid_index and rect_intersection_area under both backends on
identical inputs and prints per-size medians with the speedup. Exits
nonzero if the two backends disagree on any result, so this doubles as
a quick cross-backend sanity check.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 7]
"""
import argparse
import math
import statistics
import sys
import time

import numpy as np

from masklift import kernels


def time_once(fn):
    t0 = time.perf_counter()
    out = fn()
    return time.perf_counter() - t0, out


def best_of(fn, repeats):
    times = []
    result = None
    for _ in range(repeats):
        dt, result = time_once(fn)
        times.append(dt)
    return statistics.median(times), result


def rect_corners(rng, span=10.0):
    cx, cy = rng.uniform(-span, span, size=2)
    w, l = rng.uniform(0.5, 5.0, size=2)
    yaw = rng.uniform(-math.pi, math.pi)
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([[l / 2, w / 2], [-l / 2, w / 2],
                      [-l / 2, -w / 2], [l / 2, -w / 2]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + (cx, cy)


def bench_medoid(repeats):
    rng = np.random.default_rng(7)
    rows = []
    for n in (100, 400, 1600):
        pts = np.ascontiguousarray(rng.uniform(-20, 20, size=(n, 3)))
        timings = {}
        results = {}
        for backend in ("python", "compiled"):
            prev = kernels.force_backend(backend)
            try:
                timings[backend], results[backend] = best_of(
                    lambda: kernels.medoid_index(pts), repeats)
            finally:
                kernels.force_backend(prev)
        if results["python"] != results["compiled"]:
            print(f"medoid_index MISMATCH at n={n}: "
                  f"{results['python']} vs {results['compiled']}")
            return rows, False
        rows.append((f"medoid_index n={n}", timings["python"],
                     timings["compiled"]))
    return rows, True


def bench_rects(repeats):
    rng = np.random.default_rng(11)
    pairs = [(rect_corners(rng, span=3.0), rect_corners(rng, span=3.0))
             for _ in range(2000)]
    timings = {}
    results = {}
    for backend in ("python", "compiled"):
        prev = kernels.force_backend(backend)
        try:
            timings[backend], results[backend] = best_of(
                lambda: [kernels.rect_intersection_area(a, b)
                         for a, b in pairs], repeats)
        finally:
            kernels.force_backend(prev)
    worst = max(abs(p - c) for p, c in
                zip(results["python"], results["compiled"]))
    if worst > 1e-9:
        print(f"rect_intersection_area MISMATCH: worst |diff| {worst:.2e}")
        return [], False
    return [("rect_intersection_area x2000", timings["python"],
             timings["compiled"])], True


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing repeats per case (median reported)")
    args = parser.parse_args(argv)

    if kernels.BACKEND != "compiled":
        print("compiled extension not importable; nothing to compare")
        return 1

    all_rows = []
    ok = True
    for bench in (bench_medoid, bench_rects):
        rows, good = bench(args.repeats)
        all_rows += rows
        ok = ok and good

    width = max(len(r[0]) for r in all_rows)
    print(f"{'case':<{width}}  {'python':>10}  {'compiled':>10}  speedup")
    for name, py, comp in all_rows:
        print(f"{name:<{width}}  {py * 1e3:>8.2f}ms  {comp * 1e3:>8.2f}ms  "
              f"{py / comp:>6.1f}x")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
