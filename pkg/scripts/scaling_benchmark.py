#!/usr/bin/env python3
"""
Update scaling benchmark
- Times bgu, bhu and a dense re-bidiagonalization on random problems of growing size
- Reports multiplication counts so the quadratic and cubic growth can be compared
- Writes a CSV table next to a short summary on stdout
"""
import argparse
import sys

from bidiag_update import matrix_io
from bidiag_update.exceptions import BidiagError
from bidiag_update.profiles import BENCH_METHODS, run_update_benchmark, synthetic_problem

COLUMNS = ["n", "method", "seconds", "mult_count", "residual"]


def run(sizes, methods, density, seed):
    rows = []
    for n in sizes:
        A = synthetic_problem(n, density=density, seed=seed)
        for method in methods:
            result = run_update_benchmark(A, method, seed=seed)
            rows.append([n, method, result["seconds"], result["mult_count"], result["residual"]])
            print(f"   n={n:<6} {method:<6} {result['seconds']:.4f}s  {result['mult_count']} mults")
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200, 400])
    parser.add_argument("--method", dest="methods", action="append", choices=BENCH_METHODS)
    parser.add_argument("--density", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="scaling.csv")
    args = parser.parse_args()

    print("UPDATE SCALING BENCHMARK")
    print("=" * 50)
    try:
        rows = run(args.sizes, args.methods or list(BENCH_METHODS), args.density, args.seed)
    except BidiagError as e:
        print(f"Error: {e}")
        sys.exit(3)
    path = matrix_io.write_csv(args.out, COLUMNS, rows)
    print("=" * 50)
    print(f"Wrote {len(rows)} rows to {path}")


if __name__ == "__main__":
    main()
