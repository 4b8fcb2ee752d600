"""
Householder update of a bidiagonal under a rank-one change, without fill-in.

The reflectors that bidiagonalize C = B + b c^T are accumulated in compact
form, Q_k = I - 2 Y T^-1 Y^T and P_k = I - 2 W R^-1 W^T, and the partially
reduced matrix A_k = Q_k^T C P_k is never formed. It is applied as

    A_k = B - U M^-1 V^T,   U = [b, Y, B W],   V = [c, B^T Y, W]

with the block upper triangular middle matrix

    M = [[-1, 0,       c^T W  ],
         [Y^T b, T^T/2, Y^T B W],
         [0,     0,     R/2    ]]

so each reflector costs band products plus products with the k-column
factors. Only the columns and rows needed by the next reflector are read.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from aws_lambda_powertools import Logger
from scipy.linalg import solve_triangular

from bidiag_update.core import BidiagonalMatrix, house
from bidiag_update.exceptions import NumericalError, ValidationError
from bidiag_update.settings import SETTINGS

logger = Logger(service=SETTINGS.service_name, child=True)

HEADER_DTYPE = np.dtype("<i8")
DATA_DTYPE = np.dtype("<f8")


class HouseholderCompactState:
    """
    Working state of a Householder update.

    Attributes:
        B (BidiagonalMatrix): Band being updated; read only.
        bhat (np.ndarray): Left update vector (m).
        chat (np.ndarray): Right update vector (n).
        k_left (int): Left reflectors applied so far.
        k_right (int): Right reflectors applied so far.
        new_alphas (List[float]): Output diagonal produced so far.
        new_betas (List[float]): Output superdiagonal produced so far.
        mult_count (int): Multiplications spent in products and solves.
        use_cache (bool): Keep the k x k product Y^T B W instead of recomputing it.
    """

    def __init__(self, B: BidiagonalMatrix, bhat: np.ndarray, chat: np.ndarray, use_cache: bool = True):
        m, n = B.m, B.n
        self.B = B
        self.bhat = bhat
        self.chat = chat
        self.m = m
        self.n = n
        self.use_cache = use_cache
        self._Y = np.zeros((m, 0))
        self._W = np.zeros((n, 0))
        self._T = np.eye(0)
        self._R = np.eye(0)
        self._Ytb = np.zeros(0)
        self._ctW = np.zeros(0)
        self._YBW = np.zeros((0, 0))
        self.k_left = 0
        self.k_right = 0
        self.new_alphas: List[float] = []
        self.new_betas: List[float] = []
        self.mult_count = 0
        self.complete = False

    @property
    def Y(self) -> np.ndarray:
        return self._Y[:, : self.k_left]

    @property
    def W(self) -> np.ndarray:
        return self._W[:, : self.k_right]

    @property
    def T(self) -> np.ndarray:
        return self._T[: self.k_left, : self.k_left]

    @property
    def R(self) -> np.ndarray:
        return self._R[: self.k_right, : self.k_right]

    @property
    def Ytb(self) -> np.ndarray:
        return self._Ytb[: self.k_left]

    @property
    def ctW(self) -> np.ndarray:
        return self._ctW[: self.k_right]

    def YtBW(self) -> np.ndarray:
        if self.use_cache:
            return self._YBW[: self.k_left, : self.k_right]
        kl, kr = self.k_left, self.k_right
        BW = np.column_stack([self.B.matvec(self._W[:, j]) for j in range(kr)]) if kr else np.zeros((self.m, 0))
        self.mult_count += 2 * self.B.t * kr + self.m * kl * kr
        return self.Y.T @ BW

    def reserve(self, left: int, right: int):
        """
        Make room for ``left`` left and ``right`` right reflectors. Capacity
        doubles when it runs out and never exceeds n, so a run stopped after k
        steps holds O((m + n) k) values.
        """
        cap_l, cap_r = self._Ytb.size, self._ctW.size
        if left <= cap_l and right <= cap_r:
            return
        new_l = cap_l if left <= cap_l else min(max(left, 2 * cap_l), self.n)
        new_r = cap_r if right <= cap_r else min(max(right, 2 * cap_r), self.n)
        self._Y = _enlarged(self._Y, (self.m, new_l))
        self._W = _enlarged(self._W, (self.n, new_r))
        self._T = _enlarged(self._T, (new_l, new_l), unit_diagonal=True)
        self._R = _enlarged(self._R, (new_r, new_r), unit_diagonal=True)
        self._Ytb = _enlarged(self._Ytb, (new_l,))
        self._ctW = _enlarged(self._ctW, (new_r,))
        if self.use_cache:
            self._YBW = _enlarged(self._YBW, (new_l, new_r))

    def storage_size(self) -> int:
        """Values held beyond B, b, c and the output band: Y, W and the cached Y^T b, c^T W."""
        return self.m * self.k_left + self.n * self.k_right + self.k_left + self.k_right

    def nbytes(self) -> int:
        """Bytes actually allocated for the compact factors, T, R and the Y^T B W cache."""
        arrays = (self._Y, self._W, self._T, self._R, self._Ytb, self._ctW, self._YBW)
        return int(sum(a.nbytes for a in arrays))

    def middle_matrix(self) -> np.ndarray:
        """Dense M, for inspection and tests only."""
        kl, kr = self.k_left, self.k_right
        M = np.zeros((1 + kl + kr, 1 + kl + kr))
        M[0, 0] = -1.0
        M[0, 1 + kl :] = self.ctW
        M[1 : 1 + kl, 0] = self.Ytb
        M[1 : 1 + kl, 1 : 1 + kl] = 0.5 * self.T.T
        M[1 : 1 + kl, 1 + kl :] = self.YtBW()
        M[1 + kl :, 1 + kl :] = 0.5 * self.R
        return M


def _enlarged(a: np.ndarray, shape, unit_diagonal: bool = False) -> np.ndarray:
    out = np.eye(shape[0]) if unit_diagonal else np.zeros(shape)
    out[tuple(slice(0, s) for s in a.shape)] = a
    return out


def bhu_init(B: BidiagonalMatrix, bhat, chat, use_cache: bool = True) -> HouseholderCompactState:
    """Start a Householder update of B + bhat chat^T; nothing is factored yet."""
    bhat = np.asarray(bhat, dtype=float).reshape(-1).copy()
    chat = np.asarray(chat, dtype=float).reshape(-1).copy()
    if B.m < B.n:
        raise ValidationError(f"bhu needs m >= n, got {B.m}x{B.n}")
    if bhat.size != B.m or chat.size != B.n:
        raise ValidationError(
            f"update vectors of length {bhat.size} and {chat.size} do not fit a {B.m}x{B.n} band"
        )
    if not (np.all(np.isfinite(bhat)) and np.all(np.isfinite(chat))):
        raise ValidationError("update vectors must be finite")
    return HouseholderCompactState(B, bhat, chat, use_cache=use_cache)


def _solve_upper(R: np.ndarray, rhs: np.ndarray, trans: int = 0) -> np.ndarray:
    if R.shape[0] == 0:
        return np.zeros(0)
    if np.any(np.diag(R) == 0.0):
        raise NumericalError("singular triangular block in middle matrix")
    return solve_triangular(R, rhs, trans=trans, lower=False, unit_diagonal=True, check_finite=False)


def middle_solve(state: HouseholderCompactState, rhs) -> np.ndarray:
    """M^-1 rhs by block substitution: one solve with R, one with T^T."""
    kl, kr = state.k_left, state.k_right
    rhs = np.asarray(rhs, dtype=float).reshape(-1)
    if rhs.size != 1 + kl + kr:
        raise ValidationError(f"middle_solve needs {1 + kl + kr} entries, got {rhs.size}")
    v1, v2, v3 = rhs[0], rhs[1 : 1 + kl], rhs[1 + kl :]
    x3 = 2.0 * _solve_upper(state.R, v3)
    x1 = float(state.ctW @ x3) - v1
    x2 = 2.0 * _solve_upper(state.T, v2 - state.Ytb * x1 - state.YtBW() @ x3, trans=1)
    state.mult_count += kr * kr + kl * kl + kl * kr + kl + kr
    return np.concatenate([[x1], x2, x3])


def middle_solve_transpose(state: HouseholderCompactState, rhs) -> np.ndarray:
    """M^-T rhs: one solve with T, one with R^T."""
    kl, kr = state.k_left, state.k_right
    rhs = np.asarray(rhs, dtype=float).reshape(-1)
    if rhs.size != 1 + kl + kr:
        raise ValidationError(f"middle_solve_transpose needs {1 + kl + kr} entries, got {rhs.size}")
    u1, u2, u3 = rhs[0], rhs[1 : 1 + kl], rhs[1 + kl :]
    x2 = 2.0 * _solve_upper(state.T, u2)
    x1 = float(state.Ytb @ x2) - u1
    x3 = 2.0 * _solve_upper(state.R, u3 - state.ctW * x1 - state.YtBW().T @ x2, trans=1)
    state.mult_count += kr * kr + kl * kl + kl * kr + kl + kr
    return np.concatenate([[x1], x2, x3])


def bhu_apply(state: HouseholderCompactState, x) -> np.ndarray:
    """A_k x without densifying."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != state.n:
        raise ValidationError(f"bhu_apply needs a vector of length {state.n}, got {x.size}")
    kl = state.k_left
    Y, W = state.Y, state.W
    Bx = state.B.matvec(x)
    rhs = np.concatenate([[state.chat @ x], Y.T @ Bx, W.T @ x])
    sol = middle_solve(state, rhs)
    x1, x2, x3 = sol[0], sol[1 : 1 + kl], sol[1 + kl :]
    out = Bx - state.bhat * x1 - Y @ x2 - state.B.matvec(W @ x3)
    state.mult_count += 4 * state.B.t + 2 * state.n + 2 * state.m * kl + 2 * state.n * state.k_right + state.m
    return out


def bhu_apply_transpose(state: HouseholderCompactState, x) -> np.ndarray:
    """A_k^T x without densifying."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != state.m:
        raise ValidationError(f"bhu_apply_transpose needs a vector of length {state.m}, got {x.size}")
    kl = state.k_left
    Y, W = state.Y, state.W
    rhs = np.concatenate([[state.bhat @ x], Y.T @ x, W.T @ state.B.rmatvec(x)])
    sol = middle_solve_transpose(state, rhs)
    x1, x2, x3 = sol[0], sol[1 : 1 + kl], sol[1 + kl :]
    out = state.B.rmatvec(x) - state.chat * x1 - state.B.rmatvec(Y @ x2) - W @ x3
    state.mult_count += 6 * state.B.t + state.m + 2 * state.m * kl + 2 * state.n * state.k_right + state.n
    return out


def bhu_densify(state: HouseholderCompactState) -> np.ndarray:
    """Current A_k as a dense array, column by column."""
    return np.column_stack([bhu_apply(state, e) for e in np.eye(state.n)])


def bhu_column(state: HouseholderCompactState, k: int) -> np.ndarray:
    """Trailing entries A_k[k:, k] that the next left reflector reduces."""
    if state.k_left != k:
        raise ValidationError(f"bhu_column({k}) called with {state.k_left} left reflectors applied")
    e = np.zeros(state.n)
    e[k] = 1.0
    return bhu_apply(state, e)[k:]


def bhu_row(state: HouseholderCompactState, k: int) -> np.ndarray:
    """Trailing entries A_k[k, k + 1:] that the next right reflector reduces."""
    if state.k_left != k + 1:
        raise ValidationError(f"bhu_row({k}) called with {state.k_left} left reflectors applied")
    e = np.zeros(state.m)
    e[k] = 1.0
    return bhu_apply_transpose(state, e)[k + 1 :]


def _check_finite(value: float, vector: np.ndarray, step: int):
    if not (np.isfinite(value) and np.all(np.isfinite(vector))):
        raise NumericalError("non-finite reflector", step=step)


def _left_reflector(state: HouseholderCompactState, k: int):
    a = np.zeros(state.m)
    a[k:] = bhu_column(state, k)
    alpha, h = house(a, k)
    y = h.essential
    _check_finite(alpha, y, k)
    kl = state.k_left
    state.reserve(kl + 1, state.k_right)
    if kl:
        state._T[:kl, kl] = 2.0 * (state.Y.T @ y)
    state._Ytb[kl] = y @ state.bhat
    if state.use_cache and state.k_right:
        state._YBW[kl, : state.k_right] = state.B.rmatvec(y) @ state.W
    state._Y[:, kl] = y
    state.k_left += 1
    state.new_alphas.append(alpha)
    state.mult_count += state.m * (kl + 2) + 2 * state.B.t + state.n * state.k_right


def _right_reflector(state: HouseholderCompactState, k: int):
    a = np.zeros(state.n)
    a[k + 1 :] = bhu_row(state, k)
    beta, h = house(a, k + 1)
    w = h.essential
    _check_finite(beta, w, k)
    kr = state.k_right
    state.reserve(state.k_left, kr + 1)
    if kr:
        state._R[:kr, kr] = 2.0 * (state.W.T @ w)
    state._ctW[kr] = state.chat @ w
    if state.use_cache and state.k_left:
        state._YBW[: state.k_left, kr] = state.Y.T @ state.B.matvec(w)
    state._W[:, kr] = w
    state.k_right += 1
    state.new_betas.append(beta)
    state.mult_count += state.n * (kr + 2) + 2 * state.B.t + state.m * state.k_left


def bhu_step(state: HouseholderCompactState) -> HouseholderCompactState:
    """
    One step k: a left reflector on column k, then a right reflector on row k.

    With m == n the last two output entries are read directly after the
    left reflector of step n - 2; with m > n step n - 1 is a left reflector only.
    """
    if state.complete:
        raise ValidationError("bhu_step called on a completed factorization")
    m, n = state.m, state.n
    k = state.k_left
    if k == n - 1:
        if m == n:
            alpha = float(bhu_column(state, k)[0])
            _check_finite(alpha, np.zeros(0), k)
            state.new_alphas.append(alpha)
        else:
            _left_reflector(state, k)
        state.complete = True
        return state
    _left_reflector(state, k)
    if k == n - 2 and m == n:
        beta = float(bhu_row(state, k)[0])
        alpha = float(bhu_column(state, k + 1)[0])
        _check_finite(beta + alpha, np.zeros(0), k)
        state.new_betas.append(beta)
        state.new_alphas.append(alpha)
        state.complete = True
        return state
    _right_reflector(state, k)
    return state


@dataclass
class BhuResult:
    """
    Outcome of bhu_run. ``B`` is None when max_steps stopped the run early.
    """

    B: Optional[BidiagonalMatrix]
    Y: np.ndarray
    W: np.ndarray
    T: np.ndarray
    R: np.ndarray
    steps: int
    mult_count: int

    def left_factor(self) -> np.ndarray:
        return compact_factor(self.Y, self.T)

    def right_factor(self) -> np.ndarray:
        return compact_factor(self.W, self.R)


def compact_factor(Y: np.ndarray, T: np.ndarray) -> np.ndarray:
    """I - 2 Y T^-1 Y^T, the product of the reflectors stored in Y."""
    size = Y.shape[0]
    if Y.shape[1] == 0:
        return np.eye(size)
    return np.eye(size) - 2.0 * Y @ solve_triangular(T, Y.T, lower=False, unit_diagonal=True)


def bhu_run(state: HouseholderCompactState, max_steps: Optional[int] = None) -> BhuResult:
    """
    Run bhu_step until the band is complete or max_steps steps were taken.

    Returns:
        BhuResult: New band and the compact factors, so that
        B + b c^T = Q1 Bnew P1^T with Q1 = I - 2 Y T^-1 Y^T, P1 = I - 2 W R^-1 W^T.
    """
    steps = 0
    while not state.complete and (max_steps is None or steps < max_steps):
        bhu_step(state)
        steps += 1
    Bnew = None
    if state.complete:
        Bnew = BidiagonalMatrix(state.m, state.n, np.array(state.new_alphas), np.array(state.new_betas))
        logger.debug(f"bhu_run {state.m}x{state.n}: {steps} steps, {state.mult_count} mults")
    return BhuResult(
        Bnew, state.Y.copy(), state.W.copy(), state.T.copy(), state.R.copy(), steps, state.mult_count
    )


def bhu_update(B: BidiagonalMatrix, bhat, chat, use_cache: bool = True) -> BhuResult:
    return bhu_run(bhu_init(B, bhat, chat, use_cache=use_cache))


def pack_state(state: HouseholderCompactState) -> bytes:
    """
    Binary snapshot: int64 header (m, n, k_left, k_right), then float64 band,
    b, c, Y with T in its upper zeros, W with R in its upper zeros, Y^T b,
    c^T W, and finally the int64 output-band lengths and their float64 values.
    """
    m, n, kl, kr = state.m, state.n, state.k_left, state.k_right
    Yp = state.Y.copy()
    for j in range(kl):
        Yp[:j, j] = state.T[:j, j]
    Wp = state.W.copy()
    for j in range(kr):
        Wp[:j, j] = state.R[:j, j]
    parts = [
        np.array([m, n, kl, kr], dtype=HEADER_DTYPE).tobytes(),
        np.concatenate(
            [
                state.B.alphas,
                state.B.betas,
                state.bhat,
                state.chat,
                Yp.ravel(order="F"),
                Wp.ravel(order="F"),
                state.Ytb,
                state.ctW,
            ]
        )
        .astype(DATA_DTYPE)
        .tobytes(),
        np.array([len(state.new_alphas), len(state.new_betas)], dtype=HEADER_DTYPE).tobytes(),
        np.array(state.new_alphas + state.new_betas, dtype=DATA_DTYPE).tobytes(),
    ]
    return b"".join(parts)


def unpack_state(data: bytes, use_cache: bool = True) -> HouseholderCompactState:
    """Rebuild a state written by pack_state; the run can continue from it."""
    try:
        m, n, kl, kr = (int(v) for v in np.frombuffer(data, dtype=HEADER_DTYPE, count=4))
        offset = 4 * HEADER_DTYPE.itemsize
        t = min(m, n)
        sizes = [t, max(t - 1, 0), m, n, m * kl, n * kr, kl, kr]
        values = np.frombuffer(data, dtype=DATA_DTYPE, count=sum(sizes), offset=offset)
        offset += values.nbytes
        na, nb = (int(v) for v in np.frombuffer(data, dtype=HEADER_DTYPE, count=2, offset=offset))
        offset += 2 * HEADER_DTYPE.itemsize
        band = np.frombuffer(data, dtype=DATA_DTYPE, count=na + nb, offset=offset)
    except ValueError as e:
        raise ValidationError(f"truncated or malformed snapshot: {e}") from e
    chunks = np.split(values, np.cumsum(sizes)[:-1])
    alphas, betas, bhat, chat, Yp, Wp, Ytb, ctW = (np.array(c) for c in chunks)
    state = bhu_init(BidiagonalMatrix(m, n, alphas, betas), bhat, chat, use_cache=use_cache)
    Yp = Yp.reshape((m, kl), order="F")
    Wp = Wp.reshape((n, kr), order="F")
    state.reserve(kl, kr)
    for j in range(kl):
        state._T[:j, j] = Yp[:j, j]
        Yp[:j, j] = 0.0
    for j in range(kr):
        state._R[:j, j] = Wp[:j, j]
        Wp[:j, j] = 0.0
    state._Y[:, :kl] = Yp
    state._W[:, :kr] = Wp
    state._Ytb[:kl] = Ytb
    state._ctW[:kr] = ctW
    state.k_left, state.k_right = kl, kr
    if use_cache and kl and kr:
        BW = np.column_stack([state.B.matvec(Wp[:, j]) for j in range(kr)])
        state._YBW[:kl, :kr] = Yp.T @ BW
    state.new_alphas = [float(v) for v in band[:na]]
    state.new_betas = [float(v) for v in band[na:]]
    state.complete = na == t
    return state
