#!/usr/bin/env python3
"""Benchmark the compiled propagation engine against the pure fallback.

Times one trajectory propagation (both schemes) and a short multistart
shooting solve per engine and prints a table.  Run from a checkout:

    python benchmarks/bench_core.py [--grid 1000] [--repeats 5] [--starts 10]
"""

import argparse
import time

import numpy as np

import parshoot as ps
from parshoot.kernels import CompiledEngine, PureEngine, compiled_available
from parshoot.shooting import gauss_newton, make_shooting_map


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_benchmark(grid_n=1000, repeats=3, starts=10):
    prob = ps.ds_example()
    setup = ps.get_setup("ds-reduced")
    x0 = np.zeros(3)
    p0 = np.array([1.0, 0.0, 1.0])
    rng = np.random.default_rng(0)
    nu0s = rng.uniform(-1, 1, size=(starts, 2))

    engines = []
    if compiled_available():
        engines.append(CompiledEngine(prob))
    engines.append(PureEngine(prob))

    rows = []
    for engine in engines:
        prop_s = _time(lambda: engine.propagate(x0, p0, grid_n, "implicit-euler"),
                       repeats)
        rk4_s = _time(lambda: engine.propagate(x0, p0, grid_n, "rk4"), repeats)
        smap = make_shooting_map(setup, engine=engine)

        def solve_all():
            for nu0 in nu0s:
                gauss_newton(smap, nu0, grid_n, "implicit-euler",
                             raise_on_failure=False)

        solve_s = _time(solve_all, 1)
        rows.append({
            "engine": engine.name,
            "grid_n": grid_n,
            "propagate_ms": prop_s * 1e3,
            "rk4_ms": rk4_s * 1e3,
            "solve_ms_per_start": solve_s * 1e3 / starts,
        })
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--grid", type=int, default=1000)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--starts", type=int, default=10)
    args = parser.parse_args()

    rows = run_benchmark(args.grid, args.repeats, args.starts)
    header = f"{'engine':>9} {'grid':>6} {'propagate':>12} {'rk4':>12} {'solve/start':>12}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(f"{row['engine']:>9} {row['grid_n']:>6} "
              f"{row['propagate_ms']:>10.2f}ms {row['rk4_ms']:>10.2f}ms "
              f"{row['solve_ms_per_start']:>10.1f}ms")
    if len(rows) == 2:
        print(f"\nspeedup (implicit Euler): "
              f"{rows[1]['propagate_ms'] / rows[0]['propagate_ms']:.0f}x")


if __name__ == "__main__":
    main()
