"""Wall-clock comparison of the numba and numpy forms of each hot kernel.

Usage: ``python benchmarks/bench_kernels.py [--paths N] [--rounds n] [--repeat k]``.
Compiled forms are warmed up once before timing, so compile time is excluded.
Both forms are called directly, so ``AIPWLAB_DISABLE_NUMBA`` has no effect here.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from aipwlab import kernels


def workloads(rng, N, n):
    nx, na, d, m = 3, 3, 4, 8
    X = rng.integers(nx, size=(N, n))
    A = rng.integers(na, size=(N, n))
    Y = rng.uniform(-1, 1, size=(N, n))
    W = rng.uniform(1, 4, size=(N, n))
    eta = 0.1 / np.sqrt(np.arange(1, n + 1))
    phi = rng.normal(size=(nx, na, d)) / 2
    experts = rng.uniform(-1, 1, size=(m, nx, na))
    G = rng.normal(size=(N, d, d))
    H = G @ G.transpose(0, 2, 1) + np.eye(d)
    b = rng.normal(size=(N, d))
    c = np.zeros(N)
    return {
        "ogd_tabular": (kernels.ogd_tabular_jit, kernels.ogd_tabular_np,
                        (X, A, Y, W, eta, 1.0, np.zeros((nx, na)))),
        "ogd_linear": (kernels.ogd_linear_jit, kernels.ogd_linear_np,
                       (X, A, Y, W, eta, 1.0, phi, np.zeros(d))),
        "aggregating": (kernels.aggregating_jit, kernels.aggregating_np,
                        (X, A, Y, experts, 1.0, 0.125)),
        "ball_lsq": (kernels.ball_lsq_jit, kernels.ball_lsq_np, (H, b, c, 0.5, 10_000, 1e-10)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--rounds", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}")
    for name, (jit, npy, a) in workloads(rng, args.paths, args.rounds).items():
        jit(*a)  # compile
        tj = min(timeit.repeat(lambda: jit(*a), number=1, repeat=args.repeat))
        tn = min(timeit.repeat(lambda: npy(*a), number=1, repeat=args.repeat))
        print(f"{name:<12} {tj:>10.4f} {tn:>10.4f} {tn / tj:>7.1f}x")


if __name__ == "__main__":
    main()
