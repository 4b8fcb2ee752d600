"""
Benchmark problems and Dolan-More performance profiles for the rank-one
update methods.
"""
import time
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse
from aws_lambda_powertools import Logger

from bidiag_update.bgu import bgu_update
from bidiag_update.bhu import bhu_update
from bidiag_update.core import as_dense_matrix, bidiagonalize_dense
from bidiag_update.exceptions import ValidationError
from bidiag_update.settings import SETTINGS
from bidiag_update.update import band_factors

logger = Logger(service=SETTINGS.service_name, child=True)

BENCH_METHODS = ("bgu", "bhu", "dense")
TAU_GRID = np.logspace(0.0, 10.0, 64, base=2.0)


def synthetic_problem(n: int, density: float = 0.05, seed: int = 0, m: Optional[int] = None) -> scipy.sparse.csr_matrix:
    """Random sparse m x n matrix (square by default) with at least a nonzero diagonal."""
    m = n if m is None else m
    rng = np.random.Generator(np.random.Philox(seed))
    A = scipy.sparse.random(m, n, density=density, format="lil", random_state=rng)
    A.setdiag(1.0 + rng.random(min(m, n)))
    return A.tocsr()


def matrix_density(A) -> float:
    m, n = A.shape
    nnz = A.nnz if scipy.sparse.issparse(A) else int(np.count_nonzero(A))
    return nnz / float(m * n)


def _band_update(B, bhat, chat, method: str):
    if method == "bgu":
        res = bgu_update(B, bhat, chat)
        return res, res.B, res.audit.mult_count
    res = bhu_update(B, bhat, chat)
    return res, res.B, res.mult_count


def run_update_benchmark(A, method: str, seed: int = 0, with_factors: bool = False) -> Dict[str, float]:
    """
    Time one rank-one update A + b c^T and report Res = | ||A + b c^T||_F - ||B+||_F |.

    bgu and bhu update the band of a precomputed dense bidiagonalization and
    only the band update is timed; dense bidiagonalizes A + b c^T from
    scratch. With ``with_factors`` the explicit Q1 and P1 are built from
    the result after the timed region and their cost is reported as ``factor_seconds``. Wide
    inputs are handled through their transpose.
    """
    if method not in BENCH_METHODS:
        raise ValidationError(f"unknown benchmark method {method!r}; use one of {BENCH_METHODS}")
    A = as_dense_matrix(A)
    if A.shape[0] < A.shape[1]:
        A = A.T
    m, n = A.shape
    rng = np.random.Generator(np.random.Philox(seed))
    b = rng.standard_normal(m)
    c = rng.standard_normal(n)
    target = float(np.linalg.norm(A + np.outer(b, c)))
    if method == "dense":
        start = time.perf_counter()
        fact = bidiagonalize_dense(A + np.outer(b, c))
        seconds = time.perf_counter() - start
        return {"seconds": seconds, "residual": abs(target - fact.B.frobenius_norm()), "mult_count": fact.mult_count}
    base = bidiagonalize_dense(A)
    bhat = base.Q.T @ b
    chat = base.P.T @ c
    start = time.perf_counter()
    res, Bnew, mults = _band_update(base.B, bhat, chat, method)
    seconds = time.perf_counter() - start
    result = {"seconds": seconds, "residual": abs(target - Bnew.frobenius_norm()), "mult_count": mults}
    if with_factors:
        start = time.perf_counter()
        band_factors(res, base.B.m, base.B.n)
        result["factor_seconds"] = time.perf_counter() - start
    return result


def performance_profile(
    times: Mapping[str, Mapping[str, float]], methods: Sequence[str], taus: Optional[Sequence[float]] = None
) -> Dict[str, List[float]]:
    """
    rho_s(tau) = fraction of problems on which method s is within a factor tau
    of the fastest method. ``times`` maps problem -> method -> seconds; a
    missing or non-finite entry counts as a failure.
    """
    taus = TAU_GRID if taus is None else np.asarray(taus, dtype=float)
    problems = list(times)
    profile: Dict[str, List[float]] = {s: [0.0] * len(taus) for s in methods}
    if not problems:
        return profile
    ratios = {s: [] for s in methods}
    for p in problems:
        row = [times[p].get(s, np.inf) for s in methods]
        row = [t if np.isfinite(t) else np.inf for t in row]
        best = min(row)
        for s, t in zip(methods, row):
            if not np.isfinite(best) or not np.isfinite(t):
                ratios[s].append(np.inf)
            elif best == 0.0:
                ratios[s].append(1.0 if t == 0.0 else np.inf)
            else:
                ratios[s].append(t / best)
    for s in methods:
        r = np.array(ratios[s])
        profile[s] = [float(np.count_nonzero(r <= tau)) / len(problems) for tau in taus]
    return profile
