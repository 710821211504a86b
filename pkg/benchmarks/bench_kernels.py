"""Time the numba kernels against the pure numpy/python fallbacks.

    python benchmarks/bench_kernels.py [--nodes 3000] [--repeat 5]

Both paths are called directly from ``satsplit.kernels`` so one process
covers both; compile time is excluded (one warm-up call each).
"""
import argparse
import time

import numpy as np

from satsplit import kernels
from satsplit._accel import NUMBA_ENABLED, njit
from satsplit.graph import sbm_generate


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=3000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    k = 3
    g = sbm_generate([args.nodes // k] * k, 30 / (args.nodes / k), 1 / args.nodes, 2, seed=0)
    indptr, indices, eids = g.csr()
    x = np.random.default_rng(0).standard_normal((g.num_nodes, args.dim))
    print(f"graph: {g.num_nodes} nodes, {g.num_edges} edges, dim {args.dim}; numba enabled: {NUMBA_ENABLED}")

    cases = [
        ("mean_aggregate", kernels._mean_aggregate_loop, kernels._mean_aggregate_numpy, (indptr, indices, x)),
        ("mean_aggregate_t", kernels._mean_aggregate_t_loop, kernels._mean_aggregate_t_numpy, (indptr, indices, x)),
        ("neighbor_sum", kernels._neighbor_sum_loop, kernels._neighbor_sum_numpy, (indptr, indices, x[:, 0].copy())),
        ("bridges", kernels._bridges_loop, kernels._bridges_loop, (indptr, indices, eids, g.num_edges)),
    ]
    # Brandes is O(nm); the python fallback is only timed on a small graph
    small = sbm_generate([100, 100], 0.1, 0.01, 2, seed=1)
    sp, si, _ = small.csr()
    cases.append(("brandes (200 nodes)", kernels._brandes_loop, kernels._brandes_loop, (sp, si)))

    print(f"{'kernel':<22}{'numba [ms]':>12}{'fallback [ms]':>15}{'speedup':>10}")
    for name, loop, fallback, a in cases:
        fast = best_of(njit(loop), a, args.repeat) if NUMBA_ENABLED else float("nan")
        slow = best_of(fallback, a, 1 if fallback is loop else args.repeat)
        print(f"{name:<22}{fast * 1e3:>12.3f}{slow * 1e3:>15.3f}{slow / fast:>10.1f}")


if __name__ == "__main__":
    main()
