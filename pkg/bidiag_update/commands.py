"""
Subcommand implementations. Each tool takes the parsed options and returns a
JSON report string; errors propagate to the dispatcher in cli.py.
"""
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from aws_lambda_powertools import Logger

from bidiag_update import matrix_io
from bidiag_update.bgu import bgu_update, rotations_to_csv
from bidiag_update.bhu import bhu_init, bhu_run, pack_state, unpack_state
from bidiag_update.core import (
    BidiagonalMatrix,
    as_dense_matrix,
    bd_truncation_error_sq,
    bidiagonalize_dense,
    diff_bounds,
    exact_diff_sq,
    gkb,
    jacobi_svd,
    select_truncation,
    svd_truncation_error_sq,
)
from bidiag_update.exceptions import NumericalError, ValidationError
from bidiag_update.profiles import BENCH_METHODS, TAU_GRID, matrix_density, performance_profile, run_update_benchmark, synthetic_problem
from bidiag_update.rbd import SketchConfig, rbd
from bidiag_update.settings import SETTINGS
from bidiag_update.tracking import (
    FrobeniusAccumulator,
    ReorthPolicy,
    UpdateEvent,
    drift_check,
    incremental_svd_update,
    residual,
    save_snapshot,
    svd_track_init,
    track_init,
    track_update,
)
from bidiag_update.update import rank_one_update

logger = Logger(service=SETTINGS.service_name, child=True)

RUN_COLUMNS = ["step", "wall_seconds", "mult_count", "rotations", "residual", "drift"]
BENCH_COLUMNS = ["problem", "m", "n", "density", "method", "seconds", "residual"]
BOUNDS_COLUMNS = ["r", "lower", "exact", "upper", "bd_tail", "svd_tail"]


def _out_dir(options: Dict[str, Any]) -> Path:
    out = Path(options.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def parse_rank_range(text: Optional[str], t: int) -> Tuple[int, int]:
    """"r", "lo:hi" (inclusive) or None for 1..t."""
    if not text:
        return 1, t
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            bounds = (int(lo) if lo else 1, int(hi) if hi else t)
        else:
            bounds = (int(text), int(text))
    except ValueError as e:
        raise ValidationError(f"invalid rank range {text!r}") from e
    if not 1 <= bounds[0] <= bounds[1] <= t:
        raise ValidationError(f"rank range {text!r} outside [1, {t}]")
    return bounds


def factor_tool(options: Dict[str, Any]) -> str:
    A = matrix_io.read_matrix(options["input"])
    m, n = A.shape
    method = options.get("method") or "dense"
    rank = options.get("rank")
    logger.info(f"Factoring {m}x{n} matrix with {method}")

    start = time.perf_counter()
    if method == "dense":
        fact = bidiagonalize_dense(A)
    elif method == "gkb":
        steps = int(rank) if rank else min(m, n)
        p1 = np.zeros(n)
        p1[0] = 1.0
        fact = gkb(A, p1, steps, reorth=options.get("reorth") or "full")
    elif method == "rbd":
        if not rank:
            raise ValidationError("rbd needs --rank")
        oversample = options.get("oversample")
        cfg = SketchConfig(
            rank=int(rank),
            oversample=SETTINGS.oversample if oversample is None else int(oversample),
            kind=options.get("sketch") or "gaussian",
            seed=int(options.get("seed") or 0),
        )
        fact = rbd(A, cfg)
    else:
        raise ValidationError(f"unknown factorization method {method!r}")
    seconds = time.perf_counter() - start

    out = _out_dir(options)
    matrix_io.write_band(out / "band.json", fact.B)
    matrix_io.save_factor(out / "Q.npy", fact.Q)
    matrix_io.save_factor(out / "P.npy", fact.P)
    report = {
        "method": method,
        "m": m,
        "n": n,
        "order": fact.B.t,
        "seconds": seconds,
        "residual": fact.residual(A),
        "mult_count": fact.mult_count,
        "breakdown": fact.breakdown,
        "rank_deficient": fact.rank_deficient,
        "files": {"band": str(out / "band.json"), "Q": str(out / "Q.npy"), "P": str(out / "P.npy")},
    }
    if rank and method == "dense":
        r = int(rank)
        report["truncation_error_sq"] = {
            mode: bd_truncation_error_sq(fact.B, select_truncation(fact.B, r, mode))
            for mode in ("prefix", "best-pairs")
        }
    report.update(fact.info)
    return json.dumps(report)


def _bhu_with_snapshots(B: BidiagonalMatrix, bhat, chat, options: Dict[str, Any], out: Path):
    resume = options.get("resume")
    if resume:
        state = unpack_state(Path(resume).read_bytes())
        if state.B.m != B.m or state.B.n != B.n:
            raise ValidationError("snapshot does not match the band")
    else:
        state = bhu_init(B, bhat, chat)
    every = options.get("snapshot_every")
    snapshots = []
    if not every:
        return bhu_run(state), snapshots
    while True:
        result = bhu_run(state, max_steps=int(every))
        path = out / "bhu_state.bin"
        path.write_bytes(pack_state(state))
        snapshots.append(str(path))
        if result.B is not None:
            return result, snapshots


def update_tool(options: Dict[str, Any]) -> str:
    B = matrix_io.read_band(options["band"])
    b = matrix_io.read_vector(options["b"])
    c = matrix_io.read_vector(options["c"])
    method = options.get("method") or "bgu"
    out = _out_dir(options)
    report: Dict[str, Any] = {"method": method, "m": B.m, "n": B.n}

    factors = options.get("factors")
    if factors:
        Q = matrix_io.load_factor(Path(factors) / "Q.npy")
        P = matrix_io.load_factor(Path(factors) / "P.npy")
        start = time.perf_counter()
        fact = rank_one_update(Q, B, P, b, c, method)
        report["seconds"] = time.perf_counter() - start
        matrix_io.save_factor(out / "Q.npy", fact.Q)
        matrix_io.save_factor(out / "P.npy", fact.P)
        Bnew = fact.B
        report["mult_count"] = fact.mult_count
        target = np.linalg.norm(Q @ B.to_dense() @ P.T + np.outer(b, c))
    else:
        if b.size != B.m or c.size != B.n:
            raise ValidationError(f"vectors of length {b.size} and {c.size} do not fit a {B.m}x{B.n} band")
        target = np.linalg.norm(B.to_dense() + np.outer(b, c))
        if method == "bgu":
            start = time.perf_counter()
            res = bgu_update(B, b, c)
            report["seconds"] = time.perf_counter() - start
            Bnew = res.B
            (out / "rotations.csv").write_text(rotations_to_csv(res.left, res.right), encoding="utf-8")
            report.update(res.audit.to_dict())
            report["files"] = {"rotations": str(out / "rotations.csv")}
        elif method == "bhu":
            start = time.perf_counter()
            res, snapshots = _bhu_with_snapshots(B, b, c, options, out)
            report["seconds"] = time.perf_counter() - start
            Bnew = res.B
            for name, M in (("Y", res.Y), ("W", res.W), ("T", res.T), ("R", res.R)):
                matrix_io.save_factor(out / f"{name}.npy", M)
            report["mult_count"] = res.mult_count
            report["steps"] = res.steps
            report["snapshots"] = snapshots
        else:
            raise ValidationError(f"unknown update method {method!r}")

    matrix_io.write_band(out / "band.json", Bnew)
    report["frobenius_gap"] = abs(float(target) - Bnew.frobenius_norm())
    report["band"] = str(out / "band.json")
    return json.dumps(report)


def _stream_events(stream: matrix_io.Stream):
    for ev in stream.events:
        yield ev, UpdateEvent.triple(ev.i, ev.j, ev.theta)


def track_tool(options: Dict[str, Any]) -> str:
    stream = matrix_io.read_stream(options["stream"])
    r = int(options.get("rank") or 1)
    method = options.get("method") or "bgu"
    policy = ReorthPolicy.parse(options.get("reorth") or "adaptive")
    seed = int(options.get("seed") or 0)
    every = int(options.get("snapshot_every") or 0)
    out = _out_dir(options)

    if method == "bgu":
        tracker = track_init(stream.m, stream.n, r, policy=policy, seed=seed)
    elif method == "svd":
        tracker = svd_track_init(stream.m, stream.n, r)
    else:
        raise ValidationError(f"unknown tracking method {method!r}")
    accumulator = FrobeniusAccumulator()
    rows: List[list] = []
    snapshots = []
    logger.info(f"Tracking {len(stream.events)} events at rank {r} with {method}")
    for step, (record, ev) in enumerate(_stream_events(stream), start=1):
        start = time.perf_counter()
        try:
            if method == "bgu":
                track_update(tracker, ev)
            else:
                incremental_svd_update(tracker, ev)
        except NumericalError as e:
            raise NumericalError(f"event on line {record.line}: {e}", step=step) from e
        seconds = time.perf_counter() - start
        frob = accumulator.add(record.i, record.j, record.theta)
        if method == "bgu":
            if policy.kind != "adaptive":
                drift_check(tracker)
            drift = max(tracker.drift_Q, tracker.drift_P)
            res = residual(tracker, frob)
            rows.append([step, seconds, tracker.last_mults, tracker.last_rotations, res, drift])
            if every and step % every == 0:
                snapshots.append(str(save_snapshot(tracker, out / f"tracker_{step}.bin")))
        else:
            res = abs(frob - tracker.frobenius_norm())
            rows.append([step, seconds, 0, 0, res, 0.0])

    matrix_io.write_csv(out / "run.csv", RUN_COLUMNS, rows)
    report: Dict[str, Any] = {
        "method": method,
        "m": stream.m,
        "n": stream.n,
        "rank": r,
        "steps": len(rows),
        "totals": {
            "wall_seconds": sum(row[1] for row in rows),
            "mult_count": sum(row[2] for row in rows),
            "rotations": sum(row[3] for row in rows),
            "residual": sum(row[4] for row in rows),
        },
        "max_drift": max((row[5] for row in rows), default=0.0),
        "report": str(out / "run.csv"),
    }
    if method == "bgu":
        report["reorthogonalizations"] = tracker.reorth_count
        report["snapshot"] = str(save_snapshot(tracker, out / "tracker.bin"))
        report["snapshots"] = snapshots
    return json.dumps(report)


def _bench_problems(options: Dict[str, Any]):
    corpus = options.get("corpus")
    skipped = []
    problems = []
    if corpus:
        for path in sorted(Path(corpus).glob("*.mtx")):
            try:
                problems.append((path.stem, matrix_io.read_matrix_market(path)))
            except (ValidationError, OSError) as e:
                logger.warning(f"Skipping {path}: {e}")
                skipped.append({"file": str(path), "reason": str(e)})
    else:
        seed = int(options.get("seed") or 0)
        for size in options.get("sizes") or [50, 100]:
            problems.append((f"synthetic_{size}", synthetic_problem(int(size), seed=seed)))
    return problems, skipped


def bench_tool(options: Dict[str, Any]) -> str:
    methods = options.get("methods") or list(BENCH_METHODS)
    for method in methods:
        if method not in BENCH_METHODS:
            raise ValidationError(f"unknown benchmark method {method!r}; use one of {BENCH_METHODS}")
    seed = int(options.get("seed") or 0)
    out = _out_dir(options)
    problems, skipped = _bench_problems(options)
    rows = []
    times: Dict[str, Dict[str, float]] = {}
    for name, A in problems:
        m, n = A.shape
        times[name] = {}
        for method in methods:
            try:
                result = run_update_benchmark(A, method, seed=seed)
            except NumericalError as e:
                logger.warning(f"{method} failed on {name}: {e}")
                times[name][method] = float("inf")
                continue
            times[name][method] = result["seconds"]
            rows.append([name, m, n, matrix_density(A), method, result["seconds"], result["residual"]])

    profile = performance_profile(times, methods)
    matrix_io.write_csv(out / "bench.csv", BENCH_COLUMNS, rows)
    matrix_io.write_csv(
        out / "profile.csv",
        ["tau"] + list(methods),
        [[tau] + [profile[s][k] for s in methods] for k, tau in enumerate(TAU_GRID)],
    )
    return json.dumps(
        {
            "problems": len(problems),
            "rows": len(rows),
            "skipped": skipped,
            "max_residual": max((row[6] for row in rows), default=0.0),
            "fastest_at_tau_1": {s: profile[s][0] for s in methods},
            "files": {"bench": str(out / "bench.csv"), "profile": str(out / "profile.csv")},
        }
    )


def bounds_tool(options: Dict[str, Any]) -> str:
    A = as_dense_matrix(matrix_io.read_matrix(options["input"]))
    fact = bidiagonalize_dense(A)
    B = fact.B
    svd = jacobi_svd(B.square())
    lo, hi = parse_rank_range(options.get("rank"), B.t)
    scale = float(np.sum(A**2))
    tol = 1e-9 * max(scale, 1.0)
    rows = []
    for r in range(lo, hi + 1):
        lower, upper = diff_bounds(svd.sigma, B, r)
        exact = exact_diff_sq(B, r, svd=svd)
        if not (lower <= exact + tol and exact <= upper + tol):
            raise NumericalError(f"bound sandwich violated at r={r}: {lower} <= {exact} <= {upper}")
        rows.append(
            [r, lower, exact, upper, bd_truncation_error_sq(B, np.arange(r)), svd_truncation_error_sq(svd.sigma, r)]
        )
    out = _out_dir(options)
    matrix_io.write_csv(out / "bounds.csv", BOUNDS_COLUMNS, rows)
    return json.dumps(
        {"m": A.shape[0], "n": A.shape[1], "ranks": [lo, hi], "normalizer": scale, "report": str(out / "bounds.csv")}
    )
