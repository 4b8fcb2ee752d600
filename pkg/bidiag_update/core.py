"""
Bidiagonal building blocks: band type, Householder reflectors, dense and
Golub-Kahan bidiagonalization, truncation and its error formulas, the
SVD/BD difference bounds and a one-sided Jacobi SVD used as a verification
oracle.

Indices are 0-based. A bidiagonal of logical shape m x n with t = min(m, n)
stores alphas[i] at (i, i) and betas[i] at (i, i + 1); beta_{-1} is zero.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from aws_lambda_powertools import Logger
from scipy.sparse.linalg import aslinearoperator

from bidiag_update.exceptions import ConvergenceError, ValidationError
from bidiag_update.settings import SETTINGS

logger = Logger(service=SETTINGS.service_name, child=True)

REORTH_MODES = ("none", "full", "short-space")
TRUNCATION_MODES = ("prefix", "best-pairs")
_ZETA_LARGE = 1e150


@dataclass
class BidiagonalMatrix:
    """
    Upper bidiagonal band of a logical m x n matrix.

    Attributes:
        m (int): Logical row count.
        n (int): Logical column count.
        alphas (np.ndarray): Diagonal, t = min(m, n) entries.
        betas (np.ndarray): Superdiagonal, t - 1 entries.
    """

    m: int
    n: int
    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float).reshape(-1)
        self.betas = np.asarray(self.betas, dtype=float).reshape(-1)
        if self.m < 0 or self.n < 0:
            raise ValidationError(f"invalid bidiagonal shape {self.m}x{self.n}")
        t = min(self.m, self.n)
        if self.alphas.size != t or self.betas.size != max(t - 1, 0):
            raise ValidationError(
                f"band of a {self.m}x{self.n} bidiagonal needs {t} alphas and "
                f"{max(t - 1, 0)} betas, got {self.alphas.size} and {self.betas.size}"
            )

    @property
    def t(self) -> int:
        return min(self.m, self.n)

    @classmethod
    def zeros(cls, m: int, n: int) -> "BidiagonalMatrix":
        t = min(m, n)
        return cls(m, n, np.zeros(t), np.zeros(max(t - 1, 0)))

    @classmethod
    def from_dense(cls, D: np.ndarray) -> "BidiagonalMatrix":
        """Read the band of D; entries outside the band are ignored."""
        D = np.asarray(D, dtype=float)
        m, n = D.shape
        t = min(m, n)
        idx = np.arange(t)
        return cls(m, n, D[idx, idx].copy(), D[idx[:-1], idx[:-1] + 1].copy())

    def copy(self) -> "BidiagonalMatrix":
        return BidiagonalMatrix(self.m, self.n, self.alphas.copy(), self.betas.copy())

    def to_dense(self) -> np.ndarray:
        D = np.zeros((self.m, self.n))
        idx = np.arange(self.t)
        D[idx, idx] = self.alphas
        if self.t > 1:
            D[idx[:-1], idx[:-1] + 1] = self.betas
        return D

    def square(self) -> np.ndarray:
        """The t x t block that holds every nonzero."""
        return BidiagonalMatrix(self.t, self.t, self.alphas, self.betas).to_dense()

    def frobenius_norm(self) -> float:
        return float(np.sqrt(np.sum(self.alphas**2) + np.sum(self.betas**2)))

    def pair_sums(self) -> np.ndarray:
        """alpha_i^2 + beta_{i-1}^2, the squared norm of column i."""
        sums = self.alphas**2
        sums[1:] += self.betas**2
        return sums

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.zeros(self.m)
        t = self.t
        y[:t] = self.alphas * x[:t]
        if t > 1:
            y[: t - 1] += self.betas * x[1:t]
        return y

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.zeros(self.n)
        t = self.t
        y[:t] = self.alphas * x[:t]
        if t > 1:
            y[1:t] += self.betas * x[: t - 1]
        return y


@dataclass
class HouseholderVector:
    """
    Reflector H = I - tau * y y^T with unit y; entries of y before offset are zero.
    """

    essential: np.ndarray
    offset: int
    tau: float = 2.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = self.essential
        return x - self.tau * y * (y @ x)

    def matrix(self) -> np.ndarray:
        y = self.essential
        return np.eye(y.size) - self.tau * np.outer(y, y)


@dataclass
class SvdTriple:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self, rank: Optional[int] = None) -> np.ndarray:
        r = self.sigma.size if rank is None else rank
        return (self.U[:, :r] * self.sigma[:r]) @ self.V[:, :r].T


@dataclass
class Factorization:
    """
    A ~ Q B P^T as produced by the dense, Golub-Kahan and randomized drivers.

    Attributes:
        Q (np.ndarray): Left factor with orthonormal columns.
        B (BidiagonalMatrix): Band.
        P (np.ndarray): Right factor with orthonormal columns.
        mult_count (int): Multiplications spent by the kernel (dense driver only).
        breakdown (bool): Golub-Kahan stopped early on a negligible alpha or beta.
        rank_deficient (bool): The randomized sketch had lower numerical rank than requested.
    """

    Q: np.ndarray
    B: BidiagonalMatrix
    P: np.ndarray
    mult_count: int = 0
    breakdown: bool = False
    rank_deficient: bool = False
    info: dict = field(default_factory=dict)

    def reconstruct(self) -> np.ndarray:
        return self.Q[:, : self.B.m] @ self.B.to_dense() @ self.P[:, : self.B.n].T

    def residual(self, A) -> float:
        A = A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=float)
        return float(np.linalg.norm(self.reconstruct() - A))


class DiffBounds(NamedTuple):
    lower: float
    upper: float


def as_dense_matrix(A) -> np.ndarray:
    """Validate and convert a dense or sparse input to a finite 2-D float array."""
    if hasattr(A, "toarray"):
        A = A.toarray()
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValidationError(f"expected a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    return A


def orthogonality_drift(Q: np.ndarray) -> float:
    """||Q^T Q - I||_F."""
    k = Q.shape[1]
    return float(np.linalg.norm(Q.T @ Q - np.eye(k)))


def house(a: np.ndarray, offset: int = 0):
    """
    Reflector zeroing a[offset + 1:].

    Args:
        a (np.ndarray): Vector to reduce.
        offset (int): Index that receives the norm of a[offset:].

    Returns:
        tuple[float, HouseholderVector]: alpha with |alpha| = ||a[offset:]|| and sign
        opposite to a[offset], and the unit reflector vector. An all-zero slice gives
        alpha = 0 and y = e_offset.

    Raises:
        ValidationError: If the slice a[offset:] is empty.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if offset < 0 or offset >= a.size:
        raise ValidationError(f"house: offset {offset} leaves an empty slice of a length-{a.size} vector")
    x = a[offset:]
    norm = float(np.linalg.norm(x))
    y = np.zeros_like(a)
    if norm == 0.0:
        y[offset] = 1.0
        return 0.0, HouseholderVector(y, offset)
    alpha = -norm if x[0] >= 0.0 else norm
    v = x.copy()
    v[0] -= alpha
    y[offset:] = v / np.linalg.norm(v)
    return alpha, HouseholderVector(y, offset)


def _bidiagonalize_tall(R: np.ndarray):
    """In-place Householder bidiagonalization of R with m >= n."""
    m, n = R.shape
    Q = np.eye(m)
    P = np.eye(n)
    alphas = np.zeros(n)
    betas = np.zeros(max(n - 1, 0))
    mults = 0
    for k in range(n):
        alpha, h = house(R[:, k], k)
        y = h.essential[k:]
        rows = m - k
        block = R[k:, k + 1 :]
        if block.size:
            block -= 2.0 * np.outer(y, y @ block)
        Q[:, k:] -= 2.0 * np.outer(Q[:, k:] @ y, y)
        mults += 2 * rows + 2 * rows * (n - k - 1) + 2 * m * rows
        alphas[k] = alpha
        R[k:, k] = 0.0
        R[k, k] = alpha
        if k >= n - 1:
            continue
        if k < n - 2:
            beta, g = house(R[k, :], k + 1)
            w = g.essential[k + 1 :]
            cols = n - k - 1
            block = R[k + 1 :, k + 1 :]
            block -= 2.0 * np.outer(block @ w, w)
            P[:, k + 1 :] -= 2.0 * np.outer(P[:, k + 1 :] @ w, w)
            mults += 2 * cols + 2 * (m - k - 1) * cols + 2 * n * cols
            R[k, k + 1 :] = 0.0
            R[k, k + 1] = beta
        else:
            beta = R[k, k + 1]
        betas[k] = beta
    return Q, alphas, betas, P, mults


def bidiagonalize_dense(A) -> Factorization:
    """
    Householder bidiagonalization A = Q B P^T with square orthogonal Q (m x m)
    and P (n x n). Right reflectors never touch the first column, so P e_0 = e_0
    for m >= n. Wide input is first reduced to [L 0] by right reflectors.
    """
    A = as_dense_matrix(A)
    m, n = A.shape
    if m >= n:
        Q, alphas, betas, P, mults = _bidiagonalize_tall(A.copy())
        return Factorization(Q, BidiagonalMatrix(m, n, alphas, betas), P, mult_count=mults)

    R = A.copy()
    V = np.eye(n)
    mults = 0
    for k in range(m):
        _, g = house(R[k, :], k)
        w = g.essential[k:]
        block = R[k:, k:]
        block -= 2.0 * np.outer(block @ w, w)
        V[:, k:] -= 2.0 * np.outer(V[:, k:] @ w, w)
        mults += 2 * (n - k) + 2 * (m - k) * (n - k) + 2 * n * (n - k)
    Ql, alphas, betas, Pl, inner = _bidiagonalize_tall(np.tril(R[:, :m]))
    P = V.copy()
    P[:, :m] = V[:, :m] @ Pl
    return Factorization(
        Ql, BidiagonalMatrix(m, n, alphas, betas), P, mult_count=mults + inner + 2 * n * m * m
    )


def _project_out(basis: np.ndarray, v: np.ndarray) -> np.ndarray:
    if basis.shape[1] == 0:
        return v
    for _ in range(2):
        v = v - basis @ (basis.T @ v)
    return v


def _mgs(basis: np.ndarray, v: np.ndarray) -> np.ndarray:
    for j in range(basis.shape[1]):
        col = basis[:, j]
        v = v - (col @ v) * col
    return v


def gkb(
    operator,
    p1: np.ndarray,
    steps: int,
    reorth: str = "none",
    breakdown_tol: Optional[float] = None,
) -> Factorization:
    """
    Golub-Kahan bidiagonalization started from the unit vector p1.

    Runs the coupled recurrences A p_k = beta_{k-1} q_{k-1} + alpha_k q_k and
    A^T q_k = alpha_k p_k + beta_k p_{k+1}. ``operator`` is anything accepted by
    scipy.sparse.linalg.aslinearoperator; its matvec/rmatvec pair supplies the
    two products.

    Args:
        operator: Dense array, sparse matrix or LinearOperator of shape (m, n).
        p1 (np.ndarray): Unit starting vector of length n.
        steps (int): Number of columns to build, at most min(m, n).
        reorth (str): "none", "full" (both bases, Gram-Schmidt twice) or
            "short-space" (P only, modified Gram-Schmidt).
        breakdown_tol (Optional[float]): Relative threshold on alpha/beta against the
            running norm estimate.

    Returns:
        Factorization: Q (m x k), k x k band, P (n x k); ``breakdown`` set when the
        recurrence stopped before ``steps`` columns.

    Raises:
        ValidationError: For a non-unit p1, unknown reorth mode or bad step count.
    """
    if reorth not in REORTH_MODES:
        raise ValidationError(f"unknown reorthogonalization mode {reorth!r}; use one of {REORTH_MODES}")
    op = aslinearoperator(operator)
    m, n = op.shape
    p1 = np.asarray(p1, dtype=float).reshape(-1)
    if p1.size != n:
        raise ValidationError(f"starting vector has length {p1.size}, operator has {n} columns")
    if abs(np.linalg.norm(p1) - 1.0) > 1e-12:
        raise ValidationError("starting vector must have unit norm")
    if steps < 1 or steps > min(m, n):
        raise ValidationError(f"steps must lie in [1, {min(m, n)}], got {steps}")
    tol = SETTINGS.breakdown_tol if breakdown_tol is None else breakdown_tol

    Q = np.zeros((m, steps))
    P = np.zeros((n, steps))
    P[:, 0] = p1
    alphas: List[float] = []
    betas: List[float] = []
    beta_prev = 0.0
    norm_est = 0.0
    breakdown = False
    for k in range(steps):
        u = np.asarray(op.matvec(P[:, k]), dtype=float).reshape(-1)
        if k > 0:
            u = u - beta_prev * Q[:, k - 1]
        if reorth == "full":
            u = _project_out(Q[:, :k], u)
        alpha = float(np.linalg.norm(u))
        norm_est = max(norm_est, float(np.hypot(alpha, beta_prev)))
        if alpha <= tol * norm_est:
            breakdown = True
            break
        Q[:, k] = u / alpha
        alphas.append(alpha)
        if k == steps - 1:
            break
        v = np.asarray(op.rmatvec(Q[:, k]), dtype=float).reshape(-1) - alpha * P[:, k]
        if reorth == "full":
            v = _project_out(P[:, : k + 1], v)
        elif reorth == "short-space":
            v = _mgs(P[:, : k + 1], v)
        beta = float(np.linalg.norm(v))
        norm_est = max(norm_est, float(np.hypot(alpha, beta)))
        if beta <= tol * norm_est:
            breakdown = True
            break
        betas.append(beta)
        P[:, k + 1] = v / beta
        beta_prev = beta

    k = len(alphas)
    if breakdown:
        logger.warning(f"Golub-Kahan breakdown after {k} of {steps} steps")
    band = BidiagonalMatrix(k, k, np.array(alphas), np.array(betas[: max(k - 1, 0)]))
    return Factorization(Q[:, :k].copy(), band, P[:, :k].copy(), breakdown=breakdown)


def select_truncation(B: BidiagonalMatrix, r: int, mode: str = "prefix") -> np.ndarray:
    """
    Indices kept by a rank-r truncation: the first r, or the r pairs with the
    largest alpha_i^2 + beta_{i-1}^2 (ties go to the smaller index).
    """
    if mode not in TRUNCATION_MODES:
        raise ValidationError(f"unknown truncation mode {mode!r}; use one of {TRUNCATION_MODES}")
    if r < 1 or r > B.t:
        raise ValidationError(f"truncation rank {r} outside [1, {B.t}]")
    if mode == "prefix":
        return np.arange(r)
    order = np.argsort(-B.pair_sums(), kind="stable")
    return np.sort(order[:r])


def _check_indices(B: BidiagonalMatrix, indices: Iterable[int]) -> np.ndarray:
    idx = np.asarray(list(indices), dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= B.t):
        raise ValidationError(f"truncation index out of range [0, {B.t})")
    return idx


def reconstruct_truncated(
    Q: np.ndarray, B: BidiagonalMatrix, P: np.ndarray, indices: Iterable[int]
) -> np.ndarray:
    """Sum over kept i of (alpha_i q_i + beta_{i-1} q_{i-1}) p_i^T."""
    idx = _check_indices(B, indices)
    D = B.to_dense()
    return Q[:, : B.m] @ D[:, idx] @ P[:, idx].T


def bd_truncation_error_sq(B: BidiagonalMatrix, indices: Iterable[int]) -> float:
    """Sum of alpha_i^2 + beta_{i-1}^2 over the dropped indices."""
    idx = _check_indices(B, indices)
    dropped = np.ones(B.t, dtype=bool)
    dropped[idx] = False
    return float(np.sum(B.pair_sums()[dropped]))


def svd_truncation_error_sq(sigma: Sequence[float], r: int) -> float:
    sigma = np.asarray(sigma, dtype=float)
    if r < 0 or r > sigma.size:
        raise ValidationError(f"truncation rank {r} outside [0, {sigma.size}]")
    return float(np.sum(sigma[r:] ** 2))


def truncation_curve(B: BidiagonalMatrix, ranks: Iterable[int], mode: str = "prefix") -> List[dict]:
    """Squared truncation error of each rank, for reconstruction sequences."""
    return [
        {"rank": int(r), "error_sq": bd_truncation_error_sq(B, select_truncation(B, int(r), mode))}
        for r in ranks
    ]


def jacobi_svd(A, tol: Optional[float] = None, max_sweeps: Optional[int] = None) -> SvdTriple:
    """
    One-sided (Hestenes) Jacobi SVD for small and medium matrices.

    Column pairs are rotated until every pair satisfies
    |u_i . u_j| <= tol * ||u_i|| ||u_j||. A column whose norm falls to
    eps * ||A||_F or below counts as zero: it is not rotated again and its
    singular value is reported as 0. Returns thin factors with sigma sorted
    nonincreasing; null directions of U are completed to an orthonormal set.

    Raises:
        ValidationError: If min(m, n) exceeds the oracle limit.
        ConvergenceError: After max_sweeps sweeps without convergence; ``best``
            holds the last iterate.
    """
    A = as_dense_matrix(A)
    m, n = A.shape
    if min(m, n) > SETTINGS.jacobi_max_order:
        raise ValidationError(f"jacobi_svd is limited to min(m, n) <= {SETTINGS.jacobi_max_order}")
    if m < n:
        res = jacobi_svd(A.T, tol=tol, max_sweeps=max_sweeps)
        return SvdTriple(res.V, res.sigma, res.U)
    tol = SETTINGS.jacobi_tol if tol is None else tol
    max_sweeps = SETTINGS.jacobi_max_sweeps if max_sweeps is None else max_sweeps

    eps = float(np.finfo(float).eps)
    # columns below this squared norm are numerically zero and never rotated
    floor = (eps * float(np.linalg.norm(A))) ** 2
    Ut = A.T.copy()
    Vt = np.eye(n)
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ui = Ut[i]
                uj = Ut[j]
                a = ui @ ui
                b = uj @ uj
                g = ui @ uj
                if g == 0.0 or min(a, b) <= floor or abs(g) <= tol * np.sqrt(a) * np.sqrt(b):
                    continue
                zeta = (b - a) / (2.0 * g)
                sign = 1.0 if zeta >= 0.0 else -1.0
                if abs(zeta) > _ZETA_LARGE:
                    t = sign / (2.0 * abs(zeta))
                else:
                    t = sign / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                if abs(s) > eps:
                    rotated = True
                Ut[i], Ut[j] = c * ui - s * uj, s * ui + c * uj
                vi = Vt[i]
                vj = Vt[j]
                Vt[i], Vt[j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            return _assemble_svd(Ut, Vt, np.sqrt(floor))
    raise ConvergenceError(
        f"jacobi_svd did not converge in {max_sweeps} sweeps",
        best=_assemble_svd(Ut, Vt, np.sqrt(floor)),
        sweeps=max_sweeps,
    )


def _assemble_svd(Ut: np.ndarray, Vt: np.ndarray, cutoff: float) -> SvdTriple:
    sigma = np.linalg.norm(Ut, axis=1)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    U = Ut[order].T.copy()
    V = Vt[order].T.copy()
    nonzero = sigma > cutoff
    U[:, nonzero] /= sigma[nonzero]
    k = int(np.count_nonzero(nonzero))
    if k:
        # columns near the cutoff are only loosely orthogonal after the sweeps
        Qk, Rk = np.linalg.qr(U[:, :k])
        signs = np.where(np.diag(Rk) < 0.0, -1.0, 1.0)
        U[:, :k] = Qk * signs
    if k < sigma.size:
        # zero columns sit at the end after sorting
        basis, _ = np.linalg.qr(np.hstack([U[:, :k], np.eye(U.shape[0])]), mode="reduced")
        U[:, k:] = basis[:, k : sigma.size]
        sigma[k:] = 0.0
    return SvdTriple(U, sigma, V)


def upper_bound_candidates(sigma: Sequence[float], B: BidiagonalMatrix, r: int):
    """Both index-range sums whose minimum is the upper bound: (1..r) and (r+1..t)."""
    s2 = np.asarray(sigma, dtype=float) ** 2
    if s2.size != B.t:
        raise ValidationError(f"expected {B.t} singular values, got {s2.size}")
    if r < 1 or r > B.t:
        raise ValidationError(f"rank {r} outside [1, {B.t}]")
    total = s2 + B.pair_sums()
    return float(np.sum(total[:r])), float(np.sum(total[r:]))


def diff_bounds(sigma: Sequence[float], B: BidiagonalMatrix, r: int) -> DiffBounds:
    """
    Lower and upper bounds on ||A_r^SVD - A_r^BD||_F^2 (squared quantities).
    At r = t both truncations are exact and the bounds collapse to zero.
    """
    head, tail = upper_bound_candidates(sigma, B, r)
    if r == B.t:
        return DiffBounds(0.0, 0.0)
    s2 = np.asarray(sigma, dtype=float) ** 2
    lower = max(0.0, float(np.sum(s2[:r] - B.pair_sums()[:r])))
    return DiffBounds(lower, min(head, tail))


def exact_diff_sq(B: BidiagonalMatrix, r: int, svd: Optional[SvdTriple] = None) -> float:
    """
    ||A_r^SVD - A_r^BD||_F^2 from the band and the right singular vectors of B.

    Args:
        B (BidiagonalMatrix): Band of A.
        r (int): Truncation rank, 1 <= r <= t.
        svd (Optional[SvdTriple]): Precomputed SVD of B.square(); computed with
            jacobi_svd when omitted.
    """
    if r < 1 or r > B.t:
        raise ValidationError(f"rank {r} outside [1, {B.t}]")
    if r == B.t:
        return 0.0
    if svd is None:
        svd = jacobi_svd(B.square())
    s2 = svd.sigma**2
    head = float(np.sum(s2[:r] - B.pair_sums()[:r]))
    weights = np.sum(svd.V[:r, r:] ** 2, axis=0)
    cross = 2.0 * float(np.sum(s2[r:] * weights))
    return max(0.0, head + cross)
