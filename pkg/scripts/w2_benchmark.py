"""Dynamic W2 solver against the quantile formula on the interval."""

import argparse
import time

import numpy as np

from hkflow.fields import DensityField
from hkflow.grid import Grid
from hkflow.transport import DistanceKind, SolverOpts, TransportProblem, solve_dynamic, w2_quantile_oracle


def bump(grid, c, w):
    v = np.exp(-0.5 * ((grid.cell_centers - c) / w) ** 2)
    return DensityField(grid, v / (grid.h * v.sum()))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--time-steps", type=int, default=32)
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args()
    print(f"{'n':>5s} {'W2^2':>10s} {'oracle':>10s} {'rel err':>9s} {'iters':>6s} {'sec':>6s}")
    for n in args.cells:
        grid = Grid.interval(n)
        a, b = bump(grid, 0.3, 0.08), bump(grid, 0.7, 0.08)
        t0 = time.perf_counter()
        res = solve_dynamic(TransportProblem(grid, a, b, DistanceKind.W2, args.time_steps,
                                             SolverOpts(tol=args.tol)))
        sec = time.perf_counter() - t0
        ref = w2_quantile_oracle(grid, a, b)
        print(f"{n:5d} {res.distance_sq:10.5f} {ref:10.5f} {abs(res.distance_sq - ref) / ref:9.2e} "
              f"{res.iters:6d} {sec:6.1f}")


if __name__ == "__main__":
    main()
