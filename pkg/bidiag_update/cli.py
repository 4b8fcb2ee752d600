"""
Command-line entry point: factor, update, track, bench and bounds.

Each subcommand prints a JSON report on stdout. Exit codes: 0 on success,
2 for invalid input, 3 for numerical failures.
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Tuple

from aws_lambda_powertools import Logger

from bidiag_update.commands import bench_tool, bounds_tool, factor_tool, track_tool, update_tool
from bidiag_update.core import REORTH_MODES
from bidiag_update.exceptions import NumericalError, ValidationError
from bidiag_update.profiles import BENCH_METHODS
from bidiag_update.settings import SETTINGS
from bidiag_update.update import UPDATE_METHODS

logger = Logger(service=SETTINGS.service_name, logger_handler=logging.StreamHandler(sys.stderr))

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bidiag-update", description="Bidiagonal factorizations under low-rank updates")
    sub = parser.add_subparsers(dest="command", required=True)

    factor = sub.add_parser("factor", help="bidiagonalize a matrix")
    factor.add_argument("input", help="Matrix Market (.mtx) or dense CSV file")
    factor.add_argument("--method", choices=["dense", "gkb", "rbd"], default="dense")
    factor.add_argument("--rank", type=int, help="steps for gkb, target rank for rbd")
    factor.add_argument("--reorth", choices=REORTH_MODES, default="full")
    factor.add_argument("--oversample", type=int, help=f"rbd oversampling (default {SETTINGS.oversample})")
    factor.add_argument("--sketch", choices=["gaussian", "rademacher"], default="gaussian")
    factor.add_argument("--seed", type=int, default=SETTINGS.seed)
    factor.add_argument("--out", default=".")

    update = sub.add_parser("update", help="apply a rank-one update to a band")
    update.add_argument("band", help="band JSON written by factor")
    update.add_argument("b", help="left update vector")
    update.add_argument("c", help="right update vector")
    update.add_argument("--method", choices=UPDATE_METHODS, default="bgu")
    update.add_argument("--factors", help="directory holding Q.npy and P.npy; b and c are then in matrix coordinates")
    update.add_argument("--snapshot-every", type=int, default=0, help="bhu: write the packed state every K steps")
    update.add_argument("--resume", help="bhu: continue from a packed state")
    update.add_argument("--out", default=".")

    track = sub.add_parser("track", help="track a rank-r factorization over an event stream")
    track.add_argument("stream")
    track.add_argument("--rank", type=int, default=1)
    track.add_argument("--method", choices=["bgu", "svd"], default="bgu")
    track.add_argument("--reorth", default="adaptive", help="never, every:K or adaptive[:T]")
    track.add_argument("--seed", type=int, default=SETTINGS.seed)
    track.add_argument("--snapshot-every", type=int, default=0)
    track.add_argument("--out", default=".")

    bench = sub.add_parser("bench", help="time update methods and build performance profiles")
    bench.add_argument("corpus", nargs="?", help="directory of .mtx files; synthetic problems when omitted")
    bench.add_argument("--method", dest="methods", action="append", choices=BENCH_METHODS)
    bench.add_argument("--sizes", type=int, nargs="+")
    bench.add_argument("--seed", type=int, default=SETTINGS.seed)
    bench.add_argument("--out", default=".")

    bounds = sub.add_parser("bounds", help="tabulate truncation difference bounds")
    bounds.add_argument("input")
    bounds.add_argument("--rank", help="r or lo:hi")
    bounds.add_argument("--out", default=".")
    return parser


def process_command(command: str, options: Dict[str, Any]) -> Tuple[int, str]:
    handlers = {
        "factor": lambda: factor_tool(options),
        "update": lambda: update_tool(options),
        "track": lambda: track_tool(options),
        "bench": lambda: bench_tool(options),
        "bounds": lambda: bounds_tool(options),
    }

    try:
        if command in handlers:
            return EXIT_OK, handlers[command]()
        return EXIT_VALIDATION, json.dumps({"message": f"{command} is not a valid command"})
    except (ValidationError, OSError) as e:
        logger.error(f"Invalid input for {command}: {e}")
        return EXIT_VALIDATION, json.dumps({"message": f"Error: {str(e)}"})
    except NumericalError as e:
        logger.error(f"Numerical failure in {command}: {e}")
        return EXIT_NUMERICAL, json.dumps({"message": f"Error: {str(e)}"})
    except Exception as e:
        logger.exception(f"Error in process_command: {e}")
        return EXIT_NUMERICAL, json.dumps({"message": f"Error: {str(e)}"})


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    options = vars(args)
    command = options.pop("command")
    logger.info(f"Received command: {command}")
    code, body = process_command(command, options)
    print(body)
    return code


if __name__ == "__main__":
    sys.exit(main())
