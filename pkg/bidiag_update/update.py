"""Updates of a full factorization A = Q B P^T: A + b c^T = (Q Q1) B+ (P P1)^T."""
from typing import Tuple, Union

import numpy as np
from aws_lambda_powertools import Logger

from bidiag_update.bgu import BguResult, apply_rotations, bgu_update
from bidiag_update.bhu import BhuResult, bhu_update
from bidiag_update.core import BidiagonalMatrix, Factorization
from bidiag_update.exceptions import ValidationError
from bidiag_update.settings import SETTINGS

logger = Logger(service=SETTINGS.service_name, child=True)

UPDATE_METHODS = ("bgu", "bhu")


def band_factors(res: Union[BguResult, BhuResult], m: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Explicit Q1 (m x m) and P1 (n x n) of a finished band update."""
    if isinstance(res, BhuResult):
        return res.left_factor(), res.right_factor()
    return apply_rotations(np.eye(m), res.left, "right"), apply_rotations(np.eye(n), res.right, "right")


def update_band(B: BidiagonalMatrix, bhat, chat, method: str = "bgu") -> Tuple[BidiagonalMatrix, np.ndarray, np.ndarray, int]:
    """
    Bidiagonalize B + bhat chat^T and return (B+, Q1, P1, mults) with
    B + bhat chat^T = Q1 B+ P1^T.
    """
    if method == "bgu":
        res = bgu_update(B, bhat, chat)
        Q1, P1 = band_factors(res, B.m, B.n)
        return res.B, Q1, P1, res.audit.mult_count
    if method == "bhu":
        res = bhu_update(B, bhat, chat)
        Q1, P1 = band_factors(res, B.m, B.n)
        return res.B, Q1, P1, res.mult_count
    raise ValidationError(f"unknown update method {method!r}; use one of {UPDATE_METHODS}")


def rank_one_update(Q: np.ndarray, B: BidiagonalMatrix, P: np.ndarray, b, c, method: str = "bgu") -> Factorization:
    """
    Update A = Q B P^T to A + b c^T. Exact when Q (m x m) and P (n x n) are
    square; otherwise the parts of b and c outside their ranges are dropped.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    c = np.asarray(c, dtype=float).reshape(-1)
    if Q.shape[1] != B.m or P.shape[1] != B.n:
        raise ValidationError(f"factors {Q.shape} and {P.shape} do not match a {B.m}x{B.n} band")
    if b.size != Q.shape[0] or c.size != P.shape[0]:
        raise ValidationError(f"update vectors of length {b.size} and {c.size} do not match the factors")
    Bnew, Q1, P1, mults = update_band(B, Q.T @ b, P.T @ c, method)
    return Factorization(Q @ Q1, Bnew, P @ P1, mult_count=mults)


def rank_k_update(Q: np.ndarray, B: BidiagonalMatrix, P: np.ndarray, Bvecs, Cvecs, method: str = "bgu") -> Factorization:
    """A + Bvecs Cvecs^T as k successive rank-one updates."""
    Bvecs = np.asarray(Bvecs, dtype=float)
    Cvecs = np.asarray(Cvecs, dtype=float)
    if Bvecs.ndim == 1:
        Bvecs = Bvecs[:, None]
    if Cvecs.ndim == 1:
        Cvecs = Cvecs[:, None]
    if Bvecs.shape[1] != Cvecs.shape[1]:
        raise ValidationError(f"{Bvecs.shape[1]} left and {Cvecs.shape[1]} right update vectors")
    fact = Factorization(Q, B, P)
    mults = 0
    for k in range(Bvecs.shape[1]):
        fact = rank_one_update(fact.Q, fact.B, fact.P, Bvecs[:, k], Cvecs[:, k], method)
        mults += fact.mult_count
    fact.mult_count = mults
    logger.debug(f"rank-{Bvecs.shape[1]} update with {method}: {mults} mults")
    return fact
