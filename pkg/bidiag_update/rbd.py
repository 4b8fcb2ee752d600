"""
Randomized bidiagonal decomposition: sketch the column space, project, and
bidiagonalize the small projected matrix.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from aws_lambda_powertools import Logger
from scipy.sparse.linalg import aslinearoperator

from bidiag_update.core import (
    BidiagonalMatrix,
    Factorization,
    SvdTriple,
    bidiagonalize_dense,
    select_truncation,
)
from bidiag_update.exceptions import ValidationError
from bidiag_update.settings import SETTINGS

logger = Logger(service=SETTINGS.service_name, child=True)

SKETCH_KINDS = ("gaussian", "rademacher")


@dataclass
class SketchConfig:
    """
    Attributes:
        rank (int): Target rank r.
        oversample (int): Extra sketch columns p; 0 sketches exactly r columns.
        kind (str): "gaussian" or "rademacher" entries.
        seed (int): Seed of the Philox generator drawing the sketch.
    """

    rank: int
    oversample: int = field(default_factory=lambda: SETTINGS.oversample)
    kind: str = "gaussian"
    seed: int = field(default_factory=lambda: SETTINGS.seed)

    def validate(self, m: int, n: int):
        if self.kind not in SKETCH_KINDS:
            raise ValidationError(f"unknown sketch kind {self.kind!r}; use one of {SKETCH_KINDS}")
        if self.rank < 1 or self.rank > min(m, n):
            raise ValidationError(f"rank {self.rank} outside [1, {min(m, n)}]")
        if self.oversample < 0:
            raise ValidationError(f"oversample must be >= 0, got {self.oversample}")
        if self.rank + self.oversample > n:
            raise ValidationError(
                f"rank + oversample = {self.rank + self.oversample} exceeds the {n} columns of A"
            )


def draw_sketch(n: int, k: int, kind: str, seed: int) -> np.ndarray:
    """n x k sketching matrix from a counter-based generator; same seed, same bits."""
    rng = np.random.Generator(np.random.Philox(seed))
    if kind == "gaussian":
        return rng.standard_normal((n, k))
    return rng.choice(np.array([-1.0, 1.0]), size=(n, k))


def _range_basis(Y: np.ndarray):
    """Orthonormal basis of range(Y) from a column-pivoted QR and its numerical rank."""
    Qy, Ry, _ = scipy.linalg.qr(Y, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Ry))
    if diag.size == 0 or diag[0] == 0.0:
        return Qy[:, :0], 0
    tol = max(Y.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.count_nonzero(diag > tol))
    return Qy[:, :rank], rank


def rbd(A, cfg: SketchConfig) -> Factorization:
    """
    Rank-r randomized bidiagonal decomposition A ~ Q_r B_r P_r^T.

    Steps: Y = A S, Q_Y = orth(Y), Z = Q_Y^T A, Z^T = W R, R^T = Q_Z B_Z P_Z^T,
    so Z = Q_Z B_Z (W P_Z)^T and no n x n factor is ever formed. With
    oversampling the k x k band of Z is cut back to rank r through its SVD,
    which leaves a diagonal (hence bidiagonal) B_r.

    Args:
        A: Dense array, sparse matrix or LinearOperator.
        cfg (SketchConfig): Sketch parameters.

    Returns:
        Factorization: Q_r (m x r'), B_r (r' x r'), P_r (n x r') with r' = r unless the
        sketch was rank deficient, in which case ``rank_deficient`` is set.
    """
    op = aslinearoperator(A)
    m, n = op.shape
    cfg.validate(m, n)
    k = cfg.rank + cfg.oversample
    S = draw_sketch(n, k, cfg.kind, cfg.seed)
    Y = np.asarray(op.matmat(S), dtype=float)
    Qy, sketch_rank = _range_basis(Y)
    rank_deficient = sketch_rank < cfg.rank
    rank = min(cfg.rank, sketch_rank)
    if rank_deficient:
        logger.warning(f"sketch has numerical rank {sketch_rank} < {cfg.rank}; continuing with rank {rank}")
    if rank == 0:
        return Factorization(
            np.zeros((m, 0)), BidiagonalMatrix.zeros(0, 0), np.zeros((n, 0)), rank_deficient=True
        )

    # Z = Q_Y^T A is wide; Z^T = W R keeps the right factor at n x kz
    W, R = scipy.linalg.qr(np.asarray(op.rmatmat(Qy), dtype=float), mode="economic")
    inner = bidiagonalize_dense(R.T)
    kz = sketch_rank
    Qr = Qy @ inner.Q
    Pr = W @ inner.P
    band = BidiagonalMatrix(kz, kz, inner.B.alphas, inner.B.betas)
    if kz > rank:
        U, sigma, Vt = scipy.linalg.svd(band.square())
        Qr = Qr @ U[:, :rank]
        Pr = Pr @ Vt[:rank].T
        band = BidiagonalMatrix(rank, rank, sigma[:rank], np.zeros(rank - 1))
    return Factorization(
        Qr,
        band,
        Pr,
        mult_count=inner.mult_count,
        rank_deficient=rank_deficient,
        info={"sketch_columns": k, "sketch_rank": sketch_rank, "seed": cfg.seed, "kind": cfg.kind},
    )


def rbd_to_rsvd(Br: BidiagonalMatrix, Qr: np.ndarray, Pr: np.ndarray) -> SvdTriple:
    """Randomized SVD from an RBD: SVD of the small band composed with the factors."""
    U, sigma, Vt = scipy.linalg.svd(Br.square())
    return SvdTriple(Qr @ U, sigma, Pr @ Vt.T)


def rbd_truncate(fact: Factorization, r: int, mode: str = "best-pairs") -> Factorization:
    """
    Zero every column of B_r outside the r kept indices before any further use
    (for example rbd_to_rsvd). The band keeps its order.
    """
    keep = select_truncation(fact.B, r, mode)
    B = fact.B.copy()
    dropped = np.setdiff1d(np.arange(B.t), keep)
    B.alphas[dropped] = 0.0
    B.betas[dropped[dropped > 0] - 1] = 0.0
    return Factorization(fact.Q, B, fact.P, rank_deficient=fact.rank_deficient, info=dict(fact.info))
