"""
Rank-r subspace tracking of a stream of rank-one updates A <- A + b c^T.

The tracker keeps A ~ Q B P^T with B square upper bidiagonal of order r. An
event is projected onto span(Q) and span(P); the residual directions extend
the factors when they are not negligible, the (at most (r+1)-order) middle
matrix is updated with bgu_update, and the factorization is deflated back to
order r.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg
from aws_lambda_powertools import Logger

from bidiag_update.bgu import GivensRotation, apply_rotations, bgu_update, givens
from bidiag_update.core import BidiagonalMatrix, bidiagonalize_dense, jacobi_svd
from bidiag_update.exceptions import ValidationError
from bidiag_update.settings import SETTINGS

logger = Logger(service=SETTINGS.service_name, child=True)

POLICY_KINDS = ("never", "every_k", "adaptive")
SNAPSHOT_MAGIC = b"BDTRACK1"


@dataclass
class ReorthPolicy:
    """
    When to reorthogonalize Q and P.

    Attributes:
        kind (str): "never", "every_k" or "adaptive".
        every (int): Period for "every_k".
        threshold (float): Drift that always triggers for "adaptive"; a doubling
            of the drift since the last reorthogonalization also triggers.
    """

    kind: str = "adaptive"
    every: int = 0
    threshold: float = field(default_factory=lambda: SETTINGS.drift_threshold)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValidationError(f"unknown reorthogonalization policy {self.kind!r}; use one of {POLICY_KINDS}")
        if self.kind == "every_k" and self.every < 1:
            raise ValidationError("every_k policy needs a period >= 1")

    @classmethod
    def parse(cls, text: str) -> "ReorthPolicy":
        """"never", "every:K" or "adaptive[:THRESHOLD]"."""
        name, _, arg = text.partition(":")
        try:
            if name == "never":
                return cls("never")
            if name in ("every", "every_k"):
                return cls("every_k", every=int(arg))
            if name == "adaptive":
                return cls("adaptive", threshold=float(arg)) if arg else cls("adaptive")
        except ValueError as e:
            raise ValidationError(f"invalid reorthogonalization policy {text!r}: {e}") from e
        raise ValidationError(f"invalid reorthogonalization policy {text!r}")


@dataclass
class UpdateEvent:
    """Either dense vectors (b, c) or a sparse triple (i, j, theta) meaning theta e_i e_j^T."""

    b: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    i: Optional[int] = None
    j: Optional[int] = None
    theta: float = 0.0

    @classmethod
    def triple(cls, i: int, j: int, theta: float) -> "UpdateEvent":
        return cls(i=int(i), j=int(j), theta=float(theta))

    @property
    def is_triple(self) -> bool:
        return self.b is None

    def vectors(self, m: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
        if self.is_triple:
            if self.i is None or self.j is None or not (0 <= self.i < m and 0 <= self.j < n):
                raise ValidationError(f"event index ({self.i}, {self.j}) outside a {m}x{n} matrix")
            if not np.isfinite(self.theta):
                raise ValidationError("event value must be finite")
            b = np.zeros(m)
            c = np.zeros(n)
            b[self.i] = self.theta
            c[self.j] = 1.0
            return b, c
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if b.size != m or c.size != n:
            raise ValidationError(f"event vectors of length {b.size} and {c.size} do not fit a {m}x{n} matrix")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValidationError("event vectors must be finite")
        return b, c


class Projection(NamedTuple):
    bhat: np.ndarray
    bperp: np.ndarray
    delta: float
    chat: np.ndarray
    cperp: np.ndarray
    gamma: float


@dataclass
class TrackedFactorization:
    """
    A ~ Q B P^T of order r.

    Attributes:
        Q (np.ndarray): m x r, orthonormal columns.
        B (BidiagonalMatrix): r x r band.
        P (np.ndarray): n x r, orthonormal columns.
        update_count (int): Events applied.
        drift_Q (float): Last orthogonality estimate of Q.
        drift_P (float): Last orthogonality estimate of P.
        policy (ReorthPolicy): Reorthogonalization schedule.
        reorth_count (int): Reorthogonalizations performed.
        deflation_loss (float): Sum of squared values dropped by deflation.
    """

    Q: np.ndarray
    B: BidiagonalMatrix
    P: np.ndarray
    policy: ReorthPolicy = field(default_factory=ReorthPolicy)
    update_count: int = 0
    drift_Q: float = 0.0
    drift_P: float = 0.0
    reorth_count: int = 0
    deflation_loss: float = 0.0
    drift_calls: int = 0
    drift_baseline: float = 0.0
    last_rotations: int = 0
    last_mults: int = 0
    seed: int = field(default_factory=lambda: SETTINGS.seed)
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.Generator(np.random.Philox(self.seed))

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def r(self) -> int:
        return self.B.t

    def represented(self) -> np.ndarray:
        return (self.Q * self.B.alphas) @ self.P.T + (self.Q[:, :-1] * self.B.betas) @ self.P[:, 1:].T


def track_init(m: int, n: int, r: int, policy: Optional[ReorthPolicy] = None, seed: Optional[int] = None) -> TrackedFactorization:
    """Tracker of the zero matrix: leading r columns of the identities and B = 0."""
    if r < 1 or r > min(m, n):
        raise ValidationError(f"tracking rank {r} outside [1, {min(m, n)}]")
    return TrackedFactorization(
        Q=np.eye(m)[:, :r],
        B=BidiagonalMatrix.zeros(r, r),
        P=np.eye(n)[:, :r],
        policy=policy or ReorthPolicy(),
        seed=SETTINGS.seed if seed is None else seed,
    )


def _split(basis: np.ndarray, v: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray, float]:
    coef = basis.T @ v
    perp = v - basis @ coef
    scale = np.linalg.norm(v)
    correction = basis.T @ perp
    if np.max(np.abs(correction), initial=0.0) > tol * scale:
        coef = coef + correction
        perp = perp - basis @ correction
    return coef, perp, float(np.linalg.norm(perp))


def project(tracker: TrackedFactorization, b, c, tol: Optional[float] = None) -> Projection:
    """
    b = Q bhat + bperp and c = P chat + cperp, re-projecting once when the
    first pass leaves Q^T bperp above tol * ||b||.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    c = np.asarray(c, dtype=float).reshape(-1)
    if b.size != tracker.m or c.size != tracker.n:
        raise ValidationError(
            f"vectors of length {b.size} and {c.size} do not fit a {tracker.m}x{tracker.n} tracker"
        )
    tol = SETTINGS.tol_ortho if tol is None else tol
    bhat, bperp, delta = _split(tracker.Q, b, tol)
    chat, cperp, gamma = _split(tracker.P, c, tol)
    return Projection(bhat, bperp, delta, chat, cperp, gamma)


def _complement(Q: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to the columns of Q (which must not span the space)."""
    weights = np.einsum("ij,ij->i", Q, Q)
    e = np.zeros(Q.shape[0])
    e[int(np.argmin(weights))] = 1.0
    v = e - Q @ (Q.T @ e)
    v = v - Q @ (Q.T @ v)
    return v / np.linalg.norm(v)


def _deflation_index(B: BidiagonalMatrix, eps: float) -> int:
    """
    Index of the column to deflate. The plain rule is argmin_i alpha_i^2 + beta_{i-1}^2,
    the smallest column norm. A negligible alpha (|alpha_i| <= eps ||B||_F) takes
    precedence over that rule even when its column norm is not the smallest;
    dropping it loses at most eps^2 ||B||_F^2. Ties go to the largest index.
    """
    magnitudes = np.abs(B.alphas)
    scale = B.frobenius_norm()
    if magnitudes.min() <= eps * scale:
        values = magnitudes
    else:
        values = B.pair_sums()
    return int(values.size - 1 - np.argmin(values[::-1]))


def deflate(Q: np.ndarray, B: BidiagonalMatrix, P: np.ndarray, eps: Optional[float] = None):
    """
    Reduce Q B P^T of order r + 1 to order r.

    alpha_d is dropped; row d and column d are then rotated empty (beta_d is
    chased to the right, beta_{d-1} upward) so that deleting index d loses
    nothing else. Returns (Q, B, P, d, dropped alpha_d^2).
    """
    eps = SETTINGS.eps_aug if eps is None else eps
    order = B.t
    d = _deflation_index(B, eps)
    D = B.square()
    lost = float(D[d, d] ** 2)
    D[d, d] = 0.0
    left = []
    for j in range(d + 1, order):
        if D[d, j] == 0.0:
            continue
        c, s = givens(D[d, j], D[j, j])
        rot = GivensRotation("left", d, j, c, s)
        D = apply_rotations(D, [rot], "left")
        D[d, j] = 0.0
        left.append(rot)
    right = []
    for i in range(d - 1, -1, -1):
        if D[i, d] == 0.0:
            continue
        c, s = givens(D[i, d], D[i, i])
        rot = GivensRotation("right", d, i, c, s)
        D = apply_rotations(D, [rot], "right")
        D[i, d] = 0.0
        right.append(rot)
    keep = np.array([k for k in range(order) if k != d], dtype=int)
    band = BidiagonalMatrix.from_dense(D[np.ix_(keep, keep)])
    Q = apply_rotations(Q, left, "right")[:, keep]
    P = apply_rotations(P, right, "right")[:, keep]
    return Q, band, P, d, lost


def _extended(B: BidiagonalMatrix, rows: int, cols: int) -> BidiagonalMatrix:
    t = min(rows, cols)
    alphas = np.zeros(t)
    betas = np.zeros(max(t - 1, 0))
    alphas[: B.t] = B.alphas
    betas[: B.betas.size] = B.betas
    return BidiagonalMatrix(rows, cols, alphas, betas)


def _rotated(F: np.ndarray, rots) -> np.ndarray:
    order = F.shape[1]
    return F @ apply_rotations(np.eye(order), rots, "right")


def track_update(tracker: TrackedFactorization, ev: UpdateEvent, eps_aug: Optional[float] = None) -> TrackedFactorization:
    """
    Apply one event. The factors are extended by bperp/delta (cperp/gamma)
    only when delta > eps_aug ||b|| (gamma > eps_aug ||c||). A rank-r result
    needs no deflation; otherwise the order r + 1 factorization is deflated.
    The tracker is left unchanged when the event is rejected.
    """
    eps_aug = SETTINGS.eps_aug if eps_aug is None else eps_aug
    b, c = ev.vectors(tracker.m, tracker.n)
    nb = float(np.linalg.norm(b))
    nc = float(np.linalg.norm(c))
    if nb == 0.0 or nc == 0.0:
        tracker.update_count += 1
        tracker.last_rotations = tracker.last_mults = 0
        return tracker
    proj = project(tracker, b, c)
    r = tracker.r
    aug_q = proj.delta > eps_aug * nb
    aug_p = proj.gamma > eps_aug * nc

    res = None
    if not aug_q and not aug_p:
        res = bgu_update(tracker.B, proj.bhat, proj.chat)
        tracker.Q = _rotated(tracker.Q, res.left)
        tracker.P = _rotated(tracker.P, res.right)
        tracker.B = res.B
    elif aug_q and not aug_p:
        Qbar = np.column_stack([tracker.Q, proj.bperp / proj.delta])
        res = bgu_update(_extended(tracker.B, r + 1, r), np.append(proj.bhat, proj.delta), proj.chat)
        tracker.Q = _rotated(Qbar, res.left)[:, :r]
        tracker.P = _rotated(tracker.P, res.right)
        tracker.B = BidiagonalMatrix(r, r, res.B.alphas, res.B.betas)
    elif not aug_q and r == tracker.m:
        Pbar = np.column_stack([tracker.P, proj.cperp / proj.gamma])
        core = np.column_stack([tracker.B.square() + np.outer(proj.bhat, proj.chat), proj.bhat * proj.gamma])
        fact = bidiagonalize_dense(core)
        tracker.Q = tracker.Q @ fact.Q
        tracker.P = Pbar @ fact.P[:, :r]
        tracker.B = BidiagonalMatrix(r, r, fact.B.alphas, fact.B.betas)
    else:
        if aug_q:
            Qbar = np.column_stack([tracker.Q, proj.bperp / proj.delta])
            bext = np.append(proj.bhat, proj.delta)
        else:
            Qbar = np.column_stack([tracker.Q, _complement(tracker.Q)])
            bext = np.append(proj.bhat, 0.0)
        Pbar = np.column_stack([tracker.P, proj.cperp / proj.gamma])
        cext = np.append(proj.chat, proj.gamma)
        res = bgu_update(_extended(tracker.B, r + 1, r + 1), bext, cext)
        Q, B, P, _, lost = deflate(_rotated(Qbar, res.left), res.B, _rotated(Pbar, res.right))
        tracker.Q, tracker.B, tracker.P = Q, B, P
        tracker.deflation_loss += lost
    if res is not None:
        tracker.last_rotations = res.audit.rotations + res.audit.sign_flips
        tracker.last_mults = res.audit.mult_count
    else:
        tracker.last_rotations = 0
        tracker.last_mults = fact.mult_count
    tracker.update_count += 1
    _apply_policy(tracker)
    return tracker


def residual(tracker: TrackedFactorization, frob_A: float) -> float:
    """| ||A||_F - ||B||_F |."""
    return abs(float(frob_A) - tracker.B.frobenius_norm())


def _drift(F: np.ndarray, cols: Optional[np.ndarray] = None) -> float:
    if cols is not None:
        F = F[:, cols]
    return float(np.linalg.norm(F.T @ F - np.eye(F.shape[1])))


def drift_check(tracker: TrackedFactorization, subset: Optional[int] = None, full_every: Optional[int] = None) -> Tuple[float, float]:
    """
    Estimate ||Q^T Q - I||_F and ||P^T P - I||_F on a random subset of
    min(r, subset) columns; every full_every-th call uses all columns.
    """
    subset = SETTINGS.drift_subset if subset is None else subset
    full_every = SETTINGS.drift_full_every if full_every is None else full_every
    tracker.drift_calls += 1
    r = tracker.r
    if r <= subset or tracker.drift_calls % full_every == 0:
        cols = None
    else:
        cols = np.sort(tracker.rng.choice(r, size=subset, replace=False))
    tracker.drift_Q = _drift(tracker.Q, cols)
    tracker.drift_P = _drift(tracker.P, cols)
    return tracker.drift_Q, tracker.drift_P


def reorthogonalize(tracker: TrackedFactorization) -> TrackedFactorization:
    """
    Q = Qq Rq, P = Qp Rp; the core Rq B Rp^T is bidiagonalized again and its
    factors folded into Qq and Qp.
    """
    Qq, Rq = scipy.linalg.qr(tracker.Q, mode="economic")
    Qp, Rp = scipy.linalg.qr(tracker.P, mode="economic")
    core = Rq @ tracker.B.square() @ Rp.T
    fact = bidiagonalize_dense(core)
    tracker.Q = Qq @ fact.Q
    tracker.P = Qp @ fact.P
    tracker.B = fact.B
    tracker.reorth_count += 1
    tracker.drift_Q = _drift(tracker.Q)
    tracker.drift_P = _drift(tracker.P)
    tracker.drift_baseline = max(tracker.drift_Q, tracker.drift_P, SETTINGS.drift_floor)
    logger.info(f"reorthogonalized after {tracker.update_count} updates")
    return tracker


def _apply_policy(tracker: TrackedFactorization):
    policy = tracker.policy
    if policy.kind == "never":
        return
    if policy.kind == "every_k":
        if tracker.update_count % policy.every == 0:
            reorthogonalize(tracker)
        return
    drift = max(drift_check(tracker))
    baseline = max(tracker.drift_baseline, SETTINGS.drift_floor)
    if drift > policy.threshold or drift > 2.0 * baseline:
        logger.debug(f"drift {drift:.3e} over baseline {baseline:.3e}")
        reorthogonalize(tracker)


@dataclass
class SvdTracker:
    """Rank-r truncated SVD A ~ U diag(sigma) V^T maintained by full small SVDs."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    update_count: int = 0

    @property
    def r(self) -> int:
        return self.sigma.size

    def represented(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.sigma))


def svd_track_init(m: int, n: int, r: int) -> SvdTracker:
    if r < 1 or r > min(m, n):
        raise ValidationError(f"tracking rank {r} outside [1, {min(m, n)}]")
    return SvdTracker(np.eye(m)[:, :r], np.zeros(r), np.eye(n)[:, :r])


def incremental_svd_update(tracker: SvdTracker, ev: UpdateEvent, eps_aug: Optional[float] = None) -> SvdTracker:
    """
    Same projection and extension as track_update, but the middle matrix is
    diagonalized with jacobi_svd and truncated to its leading r triplets.
    """
    eps_aug = SETTINGS.eps_aug if eps_aug is None else eps_aug
    m, n = tracker.U.shape[0], tracker.V.shape[0]
    b, c = ev.vectors(m, n)
    nb = float(np.linalg.norm(b))
    nc = float(np.linalg.norm(c))
    tracker.update_count += 1
    if nb == 0.0 or nc == 0.0:
        return tracker
    bhat, bperp, delta = _split(tracker.U, b, SETTINGS.tol_ortho)
    chat, cperp, gamma = _split(tracker.V, c, SETTINGS.tol_ortho)
    Ubar, Vbar = tracker.U, tracker.V
    if delta > eps_aug * nb:
        Ubar = np.column_stack([Ubar, bperp / delta])
        bhat = np.append(bhat, delta)
    if gamma > eps_aug * nc:
        Vbar = np.column_stack([Vbar, cperp / gamma])
        chat = np.append(chat, gamma)
    K = np.zeros((bhat.size, chat.size))
    r = tracker.r
    K[:r, :r] = np.diag(tracker.sigma)
    K += np.outer(bhat, chat)
    svd = jacobi_svd(K)
    tracker.U = Ubar @ svd.U[:, :r]
    tracker.V = Vbar @ svd.V[:, :r]
    tracker.sigma = svd.sigma[:r].copy()
    return tracker


class FrobeniusAccumulator:
    """
    Running ||A||_F^2 of a matrix built from sparse triples, using the exact
    increment 2 theta A(i, j) + theta^2.
    """

    def __init__(self):
        self.entries: Dict[Tuple[int, int], float] = {}
        self.sq_norm = 0.0

    def add(self, i: int, j: int, theta: float) -> float:
        old = self.entries.get((i, j), 0.0)
        self.sq_norm += 2.0 * theta * old + theta * theta
        self.entries[(i, j)] = old + theta
        return self.norm

    def recompute(self) -> float:
        self.sq_norm = float(sum(v * v for v in self.entries.values()))
        return self.norm

    @property
    def norm(self) -> float:
        return float(np.sqrt(max(self.sq_norm, 0.0)))


def link_prediction_events(adjacency, steps: Optional[int] = None) -> Iterator[UpdateEvent]:
    """
    Stream A_{h+1} = A_h + a_h e_h^T: column h of the adjacency matrix arrives
    at step h, starting from A_0 = 0.
    """
    n_rows, n_cols = adjacency.shape
    steps = n_cols if steps is None else min(steps, n_cols)
    if hasattr(adjacency, "tocsc"):
        adjacency = adjacency.tocsc()
    for h in range(steps):
        if hasattr(adjacency, "toarray"):
            col = np.asarray(adjacency[:, h].toarray(), dtype=float).reshape(-1)
        else:
            col = np.asarray(adjacency[:, h], dtype=float).reshape(-1)
        c = np.zeros(n_cols)
        c[h] = 1.0
        yield UpdateEvent(b=col, c=c)


def pack_tracker(tracker: TrackedFactorization) -> bytes:
    """
    Magic, int64 (m, n, r, update_count, reorth_count, drift_calls), then
    float64 Q and P in column-major order, band, drift_Q, drift_P,
    deflation_loss and drift baseline.
    """
    header = struct.pack("<8s6q", SNAPSHOT_MAGIC, tracker.m, tracker.n, tracker.r,
                         tracker.update_count, tracker.reorth_count, tracker.drift_calls)
    data = np.concatenate(
        [
            tracker.Q.ravel(order="F"),
            tracker.P.ravel(order="F"),
            tracker.B.alphas,
            tracker.B.betas,
            [tracker.drift_Q, tracker.drift_P, tracker.deflation_loss, tracker.drift_baseline],
        ]
    ).astype("<f8")
    return header + data.tobytes()


def unpack_tracker(data: bytes, policy: Optional[ReorthPolicy] = None) -> TrackedFactorization:
    size = struct.calcsize("<8s6q")
    if len(data) < size:
        raise ValidationError("tracker snapshot is truncated")
    magic, m, n, r, count, reorths, calls = struct.unpack_from("<8s6q", data)
    if magic != SNAPSHOT_MAGIC:
        raise ValidationError("not a tracker snapshot")
    expected = m * r + n * r + r + max(r - 1, 0) + 4
    values = np.frombuffer(data, dtype="<f8", offset=size)
    if values.size != expected:
        raise ValidationError(f"tracker snapshot holds {values.size} values, expected {expected}")
    Q = values[: m * r].reshape((m, r), order="F").copy()
    offset = m * r
    P = values[offset : offset + n * r].reshape((n, r), order="F").copy()
    offset += n * r
    alphas = values[offset : offset + r].copy()
    offset += r
    betas = values[offset : offset + max(r - 1, 0)].copy()
    offset += max(r - 1, 0)
    drift_Q, drift_P, loss, baseline = (float(v) for v in values[offset:])
    tracker = TrackedFactorization(Q, BidiagonalMatrix(r, r, alphas, betas), P, policy=policy or ReorthPolicy())
    tracker.update_count, tracker.reorth_count, tracker.drift_calls = count, reorths, calls
    tracker.drift_Q, tracker.drift_P = drift_Q, drift_P
    tracker.deflation_loss, tracker.drift_baseline = loss, baseline
    return tracker


def save_snapshot(tracker: TrackedFactorization, path) -> Path:
    path = Path(path)
    path.write_bytes(pack_tracker(tracker))
    return path


def load_snapshot(path, policy: Optional[ReorthPolicy] = None) -> TrackedFactorization:
    return unpack_tracker(Path(path).read_bytes(), policy=policy)
