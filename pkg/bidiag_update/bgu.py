"""
Givens update of a bidiagonal under a rank-one change.

Given B (m x n, m >= n) and the projected vectors b, c, bgu_update returns
Bnew = G_L (B + b c^T) G_R^T upper bidiagonal together with the rotation logs
that define G_L and G_R.

Schedule: any spike b[n:] is folded upward into row n - 1; then, for
k = n - 1 down to 1, b[k] is rotated into b[k - 1] by rows (k - 1, k) and,
for k >= 2, c[k] into c[k - 1] by columns (k - 1, k). Each rotation leaves at
most one bulge, chased off the bottom right before the next elimination, so
the band never exceeds one subdiagonal and two superdiagonals. The remaining
b[0] (c[0], c[1]) is added to the top-left corner and the resulting band is
reduced back to bidiagonal form. Column 0 is never rotated, so P1 e_0 = e_0.

When m > n the fold ends with rows (n, n - 1), which leaves a transient fill
entry at (n, n - 1) in workspace row n. The elimination sweep keeps that row
to the one entry and the last step of the final reduction rotates it back
into row n - 1, so rows n..m - 1 of Bnew are zero; extract() checks this.
"""
import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from aws_lambda_powertools import Logger

from bidiag_update.core import BidiagonalMatrix
from bidiag_update.exceptions import NumericalError, ValidationError
from bidiag_update.settings import SETTINGS

logger = Logger(service=SETTINGS.service_name, child=True)

SIDES = ("left", "right")
PERMUTATION_GUARD = 1e-300
STRUCTURE_TOL = 1e-12


@dataclass(frozen=True)
class GivensRotation:
    """
    Plane rotation G acting on indices (i, j): x_i <- c x_i - s x_j and
    x_j <- s x_i + c x_j. Rows for side "left", columns for side "right".

    (c, s) = (0, 1) is a permutation. i == j is only used for sign
    reflections, recorded as (c, s) = (-1, 0).
    """

    side: str
    i: int
    j: int
    c: float
    s: float

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValidationError(f"rotation side must be one of {SIDES}, got {self.side!r}")
        if self.i == self.j and (self.c, self.s) != (-1.0, 0.0):
            raise ValidationError(f"rotation on ({self.i}, {self.j}) must act on two distinct indices")

    @property
    def is_permutation(self) -> bool:
        return self.c == 0.0 and self.s == 1.0

    @property
    def is_reflection(self) -> bool:
        return self.i == self.j


@dataclass
class BguAudit:
    rotations: int = 0
    spike_rotations: int = 0
    phase1: int = 0
    phase2: int = 0
    permutations: int = 0
    sign_flips: int = 0
    mult_count: int = 0
    early_exit: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class BguResult(NamedTuple):
    B: BidiagonalMatrix
    left: List[GivensRotation]
    right: List[GivensRotation]
    audit: BguAudit


def givens(gi: float, gj: float) -> Tuple[float, float]:
    """
    Rotation that zeroes the first component: c*gi - s*gj = 0 and
    s*gi + c*gj = sqrt(gi^2 + gj^2).

    Raises:
        NumericalError: If either input is not finite.
    """
    if not (math.isfinite(gi) and math.isfinite(gj)):
        raise NumericalError(f"givens: non-finite input ({gi}, {gj})")
    r = math.hypot(gi, gj)
    if r == 0.0:
        return 1.0, 0.0
    return gj / r, gi / r


class BandedWorkspace:
    """
    Band storage for offsets -2..3 around the diagonal plus working copies of
    b and c. Row n is kept when m > n to receive the spike; rows below it stay
    zero throughout.

    Rotations are applied only inside the window both rows (columns) can
    store, so each one touches at most five entry pairs.
    """

    LOW = 2
    HIGH = 3

    def __init__(self, B: BidiagonalMatrix, bhat: np.ndarray, chat: np.ndarray):
        self.m = B.m
        self.n = B.n
        self.nrows = self.n + (1 if self.m > self.n else 0)
        width = self.LOW + self.HIGH + 1
        self.band = [[0.0] * width for _ in range(self.nrows)]
        for i in range(self.n):
            self.band[i][self.LOW] = float(B.alphas[i])
            if i < self.n - 1:
                self.band[i][self.LOW + 1] = float(B.betas[i])
        self.bvec = [float(x) for x in bhat]
        self.cvec = [float(x) for x in chat]
        self.left_log: List[GivensRotation] = []
        self.right_log: List[GivensRotation] = []
        self.mult_counter = 0
        self.permutations = 0

    @property
    def rotation_count(self) -> int:
        return len(self.left_log) + len(self.right_log)

    def _stored(self, i: int, j: int) -> bool:
        return 0 <= i < self.nrows and 0 <= j < self.n and -self.LOW <= j - i <= self.HIGH

    def get(self, i: int, j: int) -> float:
        if self._stored(i, j):
            return self.band[i][j - i + self.LOW]
        return 0.0

    def add(self, i: int, j: int, value: float):
        self.band[i][j - i + self.LOW] += value

    def _rotation(self, gi: float, gj: float):
        try:
            if abs(gj) <= PERMUTATION_GUARD:
                if not math.isfinite(gi):
                    raise NumericalError(f"non-finite band value {gi}")
                return 0.0, 1.0, gi, True
            c, s = givens(gi, gj)
        except NumericalError as e:
            raise NumericalError(str(e), step=self.rotation_count) from e
        return c, s, s * gi + c * gj, False

    def rotate_rows(self, target: int, partner: int, pivot: Optional[int] = None) -> bool:
        """
        Left rotation on rows (target, partner) zeroing b[target] (pivot None)
        or the band entry (target, pivot). Returns False when already zero.
        """
        vec = self.bvec
        gi = vec[target] if pivot is None else self.get(target, pivot)
        if gi == 0.0:
            return False
        gj = vec[partner] if pivot is None else self.get(partner, pivot)
        c, s, r, perm = self._rotation(gi, gj)
        top, bottom = min(target, partner), max(target, partner)
        mults = 0
        if bottom < self.nrows:
            if self.band[top][0] != 0.0 or self.band[bottom][-1] != 0.0:
                raise NumericalError("bulge escaped the band workspace", step=self.rotation_count)
            trow = self.band[target]
            prow = self.band[partner]
            for col in range(max(bottom - self.LOW, 0), min(top + self.HIGH, self.n - 1) + 1):
                if col == pivot:
                    continue
                ti = col - target + self.LOW
                pi = col - partner + self.LOW
                x = trow[ti]
                y = prow[pi]
                if x == 0.0 and y == 0.0:
                    continue
                trow[ti] = c * x - s * y
                prow[pi] = s * x + c * y
                mults += 2
        elif top < self.nrows and any(v != 0.0 for v in self.band[top]):
            raise NumericalError("band fill below the workspace", step=self.rotation_count)
        if pivot is None:
            vec[target] = 0.0
            vec[partner] = r
        else:
            self.band[target][pivot - target + self.LOW] = 0.0
            self.band[partner][pivot - partner + self.LOW] = r
            x = vec[target]
            y = vec[partner]
            if x != 0.0 or y != 0.0:
                vec[target] = c * x - s * y
                vec[partner] = s * x + c * y
                mults += 2
        self._record(GivensRotation("left", target, partner, c, s), mults, perm)
        return True

    def rotate_cols(self, target: int, partner: int, pivot: Optional[int] = None) -> bool:
        """Right rotation on columns (target, partner), the transpose of rotate_rows."""
        vec = self.cvec
        gi = vec[target] if pivot is None else self.get(pivot, target)
        if gi == 0.0:
            return False
        gj = vec[partner] if pivot is None else self.get(pivot, partner)
        c, s, r, perm = self._rotation(gi, gj)
        left, right = min(target, partner), max(target, partner)
        if self.get(left - self.HIGH, left) != 0.0 or self.get(right + self.LOW, right) != 0.0:
            raise NumericalError("bulge escaped the band workspace", step=self.rotation_count)
        mults = 0
        for row in range(max(left - self.LOW, 0), min(left + self.LOW, self.nrows - 1) + 1):
            if row == pivot:
                continue
            band_row = self.band[row]
            ti = target - row + self.LOW
            pi = partner - row + self.LOW
            x = band_row[ti]
            y = band_row[pi]
            if x == 0.0 and y == 0.0:
                continue
            band_row[ti] = c * x - s * y
            band_row[pi] = s * x + c * y
            mults += 2
        if pivot is None:
            vec[target] = 0.0
            vec[partner] = r
        else:
            self.band[pivot][target - pivot + self.LOW] = 0.0
            self.band[pivot][partner - pivot + self.LOW] = r
            x = vec[target]
            y = vec[partner]
            if x != 0.0 or y != 0.0:
                vec[target] = c * x - s * y
                vec[partner] = s * x + c * y
                mults += 2
        self._record(GivensRotation("right", target, partner, c, s), mults, perm)
        return True

    def _record(self, rot: GivensRotation, mults: int, perm: bool):
        if perm:
            self.permutations += 1
            mults = 0
        self.mult_counter += mults
        (self.left_log if rot.side == "left" else self.right_log).append(rot)

    def chase(self, i: int, j: int):
        """Push a bulge at (i, i + 3) or (i, i - 2) down and off the band."""
        while 0 <= i < self.nrows and 0 <= j < self.n:
            if self.get(i, j) == 0.0:
                return
            if j - i == self.HIGH:
                self.rotate_cols(j, j - 1, pivot=i)
                i, j = j + 1, j - 1
            else:
                self.rotate_rows(i, i - 1, pivot=j)
                i, j = i - 1, i + 2

    def reflect_row(self, i: int):
        self.band[i] = [-v for v in self.band[i]]
        self.left_log.append(GivensRotation("left", i, i, -1.0, 0.0))

    def reflect_col(self, j: int):
        for row in range(max(j - self.HIGH, 0), min(j + self.LOW, self.nrows - 1) + 1):
            self.band[row][j - row + self.LOW] = -self.band[row][j - row + self.LOW]
        self.right_log.append(GivensRotation("right", j, j, -1.0, 0.0))

    def extract(self) -> BidiagonalMatrix:
        """Read the bidiagonal, checking that everything else vanished."""
        n = self.n
        alphas = np.array([self.band[i][self.LOW] for i in range(n)])
        betas = np.array([self.band[i][self.LOW + 1] for i in range(n - 1)])
        off = 0.0
        for i in range(self.nrows):
            for d in range(-self.LOW, self.HIGH + 1):
                if i < n and d in (0, 1):
                    continue
                off += self.band[i][d + self.LOW] ** 2
        result = BidiagonalMatrix(self.m, n, alphas, betas)
        if not (np.all(np.isfinite(alphas)) and np.all(np.isfinite(betas)) and math.isfinite(off)):
            raise NumericalError("non-finite values in updated band", step=self.rotation_count)
        if math.sqrt(off) > STRUCTURE_TOL * max(result.frobenius_norm(), np.finfo(float).tiny):
            raise NumericalError(
                f"updated band is not bidiagonal (off-band norm {math.sqrt(off):.3e})",
                step=self.rotation_count,
            )
        return result


def _support(v: np.ndarray) -> np.ndarray:
    return np.flatnonzero(v)


def _already_bidiagonal(bhat: np.ndarray, chat: np.ndarray, n: int) -> bool:
    rows = _support(bhat)
    cols = _support(chat)
    if rows.size == 0 or cols.size == 0:
        return True
    if rows.max() >= n:
        return False
    return cols.min() - rows.max() >= 0 and cols.max() - rows.min() <= 1


def bgu_update(B: BidiagonalMatrix, bhat, chat) -> BguResult:
    """
    Bidiagonalize B + bhat chat^T with Givens rotations.

    Args:
        B (BidiagonalMatrix): Current band, m >= n.
        bhat (np.ndarray): Left update vector, length m.
        chat (np.ndarray): Right update vector, length n.

    Returns:
        BguResult: Bnew (nonnegative band unless the update was already
        bidiagonal), left and right rotation logs in application order, and
        the audit counters.

    Raises:
        ValidationError: On shape mismatch or m < n.
        NumericalError: On non-finite values, with the rotation index.
    """
    bhat = np.asarray(bhat, dtype=float).reshape(-1)
    chat = np.asarray(chat, dtype=float).reshape(-1)
    m, n = B.m, B.n
    if m < n:
        raise ValidationError(f"bgu_update needs m >= n, got {m}x{n}")
    if bhat.size != m or chat.size != n:
        raise ValidationError(
            f"update vectors of length {bhat.size} and {chat.size} do not fit a {m}x{n} band"
        )
    if not (np.all(np.isfinite(bhat)) and np.all(np.isfinite(chat))):
        raise NumericalError("non-finite update vector", step=0)

    audit = BguAudit()
    if _already_bidiagonal(bhat, chat, n):
        Bnew = B.copy()
        for i in _support(bhat):
            for j in _support(chat):
                if j == i:
                    Bnew.alphas[i] += bhat[i] * chat[j]
                else:
                    Bnew.betas[i] += bhat[i] * chat[j]
        audit.early_exit = True
        return BguResult(Bnew, [], [], audit)

    ws = BandedWorkspace(B, bhat, chat)
    for i in range(m - 1, n - 1, -1):
        ws.rotate_rows(i, i - 1)
    audit.spike_rotations = ws.rotation_count

    for k in range(n - 1, 0, -1):
        if ws.rotate_rows(k, k - 1):
            ws.chase(k - 1, k + 2)
        if k >= 2 and ws.rotate_cols(k, k - 1):
            ws.chase(k + 1, k - 1)
    audit.phase1 = ws.rotation_count - audit.spike_rotations

    b0 = ws.bvec[0]
    ws.add(0, 0, b0 * ws.cvec[0])
    if n > 1:
        ws.add(0, 1, b0 * ws.cvec[1])
    ws.bvec = [0.0] * m
    ws.cvec = [0.0] * n

    before = ws.rotation_count
    for k in range(n):
        if k + 1 < ws.nrows and ws.rotate_rows(k + 1, k, pivot=k):
            ws.chase(k, k + 3)
        if k + 2 < n and ws.rotate_cols(k + 2, k + 1, pivot=k):
            ws.chase(k + 3, k + 1)
    audit.phase2 = ws.rotation_count - before
    audit.rotations = ws.rotation_count

    for i in range(n):
        if ws.get(i, i) < 0.0:
            ws.reflect_row(i)
            audit.sign_flips += 1
        if i + 1 < n and ws.get(i, i + 1) < 0.0:
            ws.reflect_col(i + 1)
            audit.sign_flips += 1

    Bnew = ws.extract()
    audit.permutations = ws.permutations
    audit.mult_count = ws.mult_counter
    logger.debug(f"bgu_update {m}x{n}: {audit.rotations} rotations, {audit.mult_count} mults")
    return BguResult(Bnew, ws.left_log, ws.right_log, audit)


def apply_rotations(
    M, rots: Sequence[GivensRotation], side: str, transpose: bool = False
) -> np.ndarray:
    """
    Apply rotations in sequence: M <- G_N ... G_1 M for side "left",
    M <- M G_1^T ... G_N^T for side "right". ``transpose`` applies the inverse
    sequence (reversed, s -> -s).

    With the logs of bgu_update, Q1 = apply_rotations(I, left, "right") and
    P1 = apply_rotations(I, right, "right").
    """
    if side not in SIDES:
        raise ValidationError(f"side must be one of {SIDES}, got {side!r}")
    M = np.array(M, dtype=float)
    size = M.shape[0] if side == "left" else M.shape[1]
    sequence = reversed(rots) if transpose else rots
    view = M if side == "left" else M.T
    for rot in sequence:
        i, j = rot.i, rot.j
        if not (0 <= i < size and 0 <= j < size):
            raise ValidationError(f"rotation on ({i}, {j}) out of range for dimension {size}")
        c = rot.c
        s = -rot.s if transpose else rot.s
        if i == j:
            view[i] *= c
            continue
        xi = view[i].copy()
        xj = view[j].copy()
        view[i] = c * xi - s * xj
        view[j] = s * xi + c * xj
    return M


def rotations_to_csv(left: Sequence[GivensRotation], right: Sequence[GivensRotation]) -> str:
    """Rotation log as CSV rows side,i,j,c,s (left rotations first)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["side", "i", "j", "c", "s"])
    for rot in list(left) + list(right):
        writer.writerow([rot.side, rot.i, rot.j, repr(rot.c), repr(rot.s)])
    return buffer.getvalue()


def rotations_from_csv(text: str) -> Tuple[List[GivensRotation], List[GivensRotation]]:
    left: List[GivensRotation] = []
    right: List[GivensRotation] = []
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        rot = GivensRotation(row["side"], int(row["i"]), int(row["j"]), float(row["c"]), float(row["s"]))
        (left if rot.side == "left" else right).append(rot)
    return left, right
