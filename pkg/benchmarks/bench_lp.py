"""Timing comparison of the two simplex kernels on scheduling-sized LPs.

Run with ``python3 benchmarks/bench_lp.py``.  Solves the same batch of
instances with the pure numpy kernel and, if built, the compiled kernel,
and prints per-size medians plus the speedup.  Instances mirror the
package's real workload: per-slot power boxes with two stacked families of
cumulative-energy rows.
"""

from __future__ import annotations

import time

import numpy as np

from fleetflex.lp import LinearProgram, LpStatus, available_kernels, solve
from fleetflex.polytope import EvSessionParams, FleetParams, TimeGrid, aggregate, build_b_ev


def scheduling_instance(T: int, n_evs: int, seed: int) -> LinearProgram:
    rng = np.random.default_rng(seed)
    grid = TimeGrid(T=T, delta_t=0.25)
    fleet = FleetParams()
    envs = []
    for _ in range(n_evs):
        t_arr = int(rng.integers(0, T - 4))
        t_dep = int(rng.integers(t_arr + 4, T + 1))
        c_max = float(rng.choice([20.0, 40.0, 80.0]))
        c_arr = float(rng.uniform(0.05, 0.2)) * c_max
        avail_kwh = 7.0 * grid.delta_t * (t_dep - t_arr)
        c_dep = min(c_max, c_arr + float(rng.uniform(0.3, 0.9)) * avail_kwh)
        envs.append(build_b_ev(EvSessionParams(t_arr, t_dep, 7.0, -7.0, c_max, 0.0, c_arr, c_dep), fleet, grid))
    agg = aggregate(envs)

    lam = rng.uniform(0.05, 0.40, size=T)
    c = np.concatenate([lam, 0.8 * lam]) * grid.delta_t
    from fleetflex.polytope import build_A

    A = build_A(fleet, grid)
    soc = np.vstack([A.block("soc_upper"), A.block("soc_lower")])
    h = np.concatenate([agg.c_max_block, agg.c_min_block])
    lo = np.concatenate([np.zeros(T), -agg.neg_p_min_block])
    hi = np.concatenate([agg.p_max_block, np.zeros(T)])
    return LinearProgram(c=c, G=soc, h=h, lo=lo, hi=hi)


def time_kernel(instances, kernel: str) -> list[float]:
    times = []
    for lp in instances:
        t0 = time.perf_counter()
        sol = solve(lp, kernel=kernel)
        times.append(time.perf_counter() - t0)
        assert sol.status is LpStatus.OPTIMAL, sol.status
    return times


def main() -> None:
    kernels = sorted(available_kernels())
    print(f"kernels available: {kernels}")
    for T, n_evs, reps in [(24, 50, 5), (48, 100, 5), (96, 200, 3)]:
        instances = [scheduling_instance(T, n_evs, seed) for seed in range(reps)]
        medians = {}
        for k in kernels:
            medians[k] = float(np.median(time_kernel(instances, k)))
        line = f"T={T:3d} n_evs={n_evs:4d}: " + "  ".join(f"{k}={medians[k]*1e3:8.2f} ms" for k in kernels)
        if "cython" in medians and "python" in medians:
            line += f"  speedup={medians['python'] / medians['cython']:5.1f}x"
        print(line)


if __name__ == "__main__":
    main()
