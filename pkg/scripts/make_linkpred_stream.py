#!/usr/bin/env python3
"""
Link-prediction event stream
- Reads an adjacency matrix (Matrix Market) or draws a random graph
- Emits column h of the adjacency matrix at step h, one triple per nonzero
- Writes a stream file usable with `bidiag-update track`
"""
import argparse
import sys

import numpy as np
import scipy.sparse

from bidiag_update import matrix_io
from bidiag_update.exceptions import BidiagError
from bidiag_update.profiles import synthetic_problem


def column_events(adjacency, steps=None):
    """(i, h, a_ih, h) for every nonzero of the first `steps` columns."""
    A = scipy.sparse.csc_matrix(adjacency)
    steps = A.shape[1] if steps is None else min(steps, A.shape[1])
    for h in range(steps):
        start, end = A.indptr[h], A.indptr[h + 1]
        order = np.argsort(A.indices[start:end], kind="stable")
        for i, value in zip(A.indices[start:end][order], A.data[start:end][order]):
            yield int(i), h, float(value), h


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("output")
    parser.add_argument("--adjacency", help="Matrix Market adjacency matrix")
    parser.add_argument("--nodes", type=int, default=200, help="size of the random graph")
    parser.add_argument("--density", type=float, default=0.02)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print("LINK-PREDICTION STREAM")
    print("=" * 50)
    try:
        if args.adjacency:
            A = matrix_io.read_matrix_market(args.adjacency)
            print(f"Adjacency: {args.adjacency} {A.shape[0]}x{A.shape[1]}")
        else:
            A = synthetic_problem(args.nodes, density=args.density, seed=args.seed)
            print(f"Random graph: {args.nodes} nodes, density {args.density}")
        events = list(column_events(A, args.steps))
        path = matrix_io.write_stream(args.output, A.shape[0], A.shape[1], events)
    except (BidiagError, OSError) as e:
        print(f"Error: {e}")
        sys.exit(2)
    print(f"Wrote {len(events)} events to {path}")


if __name__ == "__main__":
    main()
