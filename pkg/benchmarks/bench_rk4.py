"""Time the compiled and pure-Python RK4 kernels on the acceptance closed loop.

    python benchmarks/bench_rk4.py [--steps 100000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from aggnash import _backend
from aggnash.dynamics import AlgorithmParams, closed_loop_matrix, default_initial_state
from aggnash.game_model import lq_game
from aggnash.switching_graph import generate_partition_schedule, laplacian


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--players", type=int, default=5)
    args = ap.parse_args()

    N = args.players
    game = lq_game(N, c=list(range(1, N + 1)), d=0.1)
    sch = generate_partition_schedule(N, 2, 0.5)
    M, b = closed_loop_matrix(game, laplacian(sch.graphs[0]), AlgorithmParams(0.03))
    y0 = default_initial_state(game).as_vector().reshape(-1, 1)

    results = {}
    for name in sorted(_backend.KERNELS):
        best = np.inf
        for _ in range(args.repeat):
            Y = y0.copy()
            t0 = time.perf_counter()
            _backend.affine_steps(M, b, Y, 1e-3, args.steps, 1000, 1e9, name)
            best = min(best, time.perf_counter() - t0)
        results[name] = (best, Y.ravel().copy())
        print(f"{name:>7}: {best:8.4f} s  ({args.steps / best:,.0f} steps/s, dim {M.shape[0]})")
    if len(results) == 2:
        (tc, yc), (tp, yp) = results["cython"], results["python"]
        print(f"speedup: {tp / tc:.1f}x   max |diff| = {np.max(np.abs(yc - yp)):.2e}")


if __name__ == "__main__":
    main()
