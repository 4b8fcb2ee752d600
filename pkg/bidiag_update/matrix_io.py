"""
File formats: Matrix Market and dense CSV matrices, plain-text vectors,
JSON bands, .npy factors, event streams and CSV reports.
"""
import csv
import io
import json
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse
from aws_lambda_powertools import Logger

from bidiag_update.core import BidiagonalMatrix
from bidiag_update.exceptions import ParseError
from bidiag_update.settings import SETTINGS

logger = Logger(service=SETTINGS.service_name, child=True)

PathLike = Union[str, Path]


class StreamEvent(NamedTuple):
    i: int
    j: int
    theta: float
    timestamp: Optional[int]
    line: int


class Stream(NamedTuple):
    m: int
    n: int
    events: List[StreamEvent]


def _locate_mm_error(path: Path) -> Tuple[Optional[int], str]:
    """First offending line of a Matrix Market file, scanning the way the reader does."""
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].lower().startswith("%%matrixmarket"):
        return 1, "missing %%MatrixMarket banner"
    banner = lines[0].split()
    layout = banner[2].lower() if len(banner) > 2 else ""
    size_fields = 3 if layout == "coordinate" else 2
    expected_width = None
    for number, text in enumerate(lines[1:], start=2):
        stripped = text.strip()
        if not stripped or stripped.startswith("%"):
            continue
        tokens = stripped.split()
        if expected_width is None:
            if len(tokens) != size_fields or not all(t.isdigit() for t in tokens):
                return number, f"size line must hold {size_fields} integers"
            expected_width = 3 if layout == "coordinate" else 1
            continue
        try:
            [float(t) for t in tokens]
        except ValueError:
            return number, f"non-numeric entry {stripped!r}"
        if len(tokens) < expected_width:
            return number, f"entry needs {expected_width} fields"
    return None, "inconsistent Matrix Market data"


def read_matrix_market(path: PathLike):
    """Sparse (CSR) for coordinate files, dense for array files."""
    path = Path(path)
    try:
        A = scipy.io.mmread(str(path))
    except OSError:
        raise
    except Exception as e:
        line, reason = _locate_mm_error(path)
        raise ParseError(f"{reason} ({e})", path=str(path), line=line) from e
    if scipy.sparse.issparse(A):
        A = A.tocsr().astype(float)
        if not np.all(np.isfinite(A.data)):
            raise ParseError("matrix has non-finite entries", path=str(path))
        return A
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ParseError("matrix has non-finite entries", path=str(path))
    return A


def read_dense_csv(path: PathLike) -> np.ndarray:
    path = Path(path)
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as f:
        for number, text in enumerate(f, start=1):
            stripped = text.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                row = [float(t) for t in stripped.replace(";", ",").split(",")]
            except ValueError as e:
                raise ParseError(f"non-numeric value: {e}", path=str(path), line=number) from e
            if rows and len(row) != len(rows[0]):
                raise ParseError(
                    f"row has {len(row)} values, expected {len(rows[0])}", path=str(path), line=number
                )
            if not all(np.isfinite(row)):
                raise ParseError("non-finite value", path=str(path), line=number)
            rows.append(row)
    if not rows:
        raise ParseError("no data rows", path=str(path))
    return np.array(rows)


def read_matrix(path: PathLike):
    """Matrix Market for .mtx (and .mm), dense CSV otherwise."""
    path = Path(path)
    if path.suffix.lower() in (".mtx", ".mm"):
        return read_matrix_market(path)
    return read_dense_csv(path)


def write_matrix_market(path: PathLike, A) -> Path:
    path = Path(path)
    scipy.io.mmwrite(str(path), A)
    return path if path.suffix else path.with_suffix(".mtx")


def read_vector(path: PathLike) -> np.ndarray:
    """.npy, or text with values separated by whitespace, commas or newlines."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return np.asarray(np.load(path), dtype=float).reshape(-1)
    values: List[float] = []
    with open(path, "r", encoding="utf-8") as f:
        for number, text in enumerate(f, start=1):
            stripped = text.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                values.extend(float(t) for t in stripped.replace(",", " ").split())
            except ValueError as e:
                raise ParseError(f"non-numeric value: {e}", path=str(path), line=number) from e
    vector = np.array(values)
    if not np.all(np.isfinite(vector)):
        raise ParseError("vector has non-finite entries", path=str(path))
    return vector


def band_to_json(B: BidiagonalMatrix) -> str:
    return json.dumps({"m": B.m, "n": B.n, "alphas": B.alphas.tolist(), "betas": B.betas.tolist()})


def write_band(path: PathLike, B: BidiagonalMatrix) -> Path:
    path = Path(path)
    path.write_text(band_to_json(B) + "\n", encoding="utf-8")
    return path


def read_band(path: PathLike) -> BidiagonalMatrix:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=str(path), line=e.lineno) from e
    try:
        return BidiagonalMatrix(int(data["m"]), int(data["n"]), data["alphas"], data["betas"])
    except (KeyError, TypeError) as e:
        raise ParseError(f"band file needs m, n, alphas and betas: {e}", path=str(path)) from e


def save_factor(path: PathLike, M: np.ndarray) -> Path:
    path = Path(path)
    np.save(path, np.asarray(M, dtype=float))
    return path


def load_factor(path: PathLike) -> np.ndarray:
    return np.asarray(np.load(Path(path)), dtype=float)


def read_stream(path: PathLike) -> Stream:
    """
    Header "m n count", then "i j theta [timestamp]" per line with 1-based
    indices. Events are returned 0-based; with timestamps they are ordered by
    timestamp, ties kept in file order.
    """
    path = Path(path)
    header = None
    events: List[StreamEvent] = []
    with open(path, "r", encoding="utf-8") as f:
        for number, text in enumerate(f, start=1):
            stripped = text.strip()
            if not stripped or stripped.startswith("#") or stripped.startswith("%"):
                continue
            tokens = stripped.split()
            if header is None:
                try:
                    m, n, count = (int(t) for t in tokens)
                except ValueError as e:
                    raise ParseError("header must be 'm n count'", path=str(path), line=number) from e
                if m < 1 or n < 1 or count < 0:
                    raise ParseError(f"invalid header {m} {n} {count}", path=str(path), line=number)
                header = (m, n, count)
                continue
            if len(tokens) not in (3, 4):
                raise ParseError("event needs 'i j theta [timestamp]'", path=str(path), line=number)
            try:
                i, j = int(tokens[0]), int(tokens[1])
                theta = float(tokens[2])
                stamp = int(tokens[3]) if len(tokens) == 4 else None
            except ValueError as e:
                raise ParseError(f"malformed event: {e}", path=str(path), line=number) from e
            if not (1 <= i <= header[0] and 1 <= j <= header[1]):
                raise ParseError(
                    f"event index ({i}, {j}) outside a {header[0]}x{header[1]} matrix", path=str(path), line=number
                )
            if not np.isfinite(theta):
                raise ParseError("event value must be finite", path=str(path), line=number)
            events.append(StreamEvent(i - 1, j - 1, theta, stamp, number))
    if header is None:
        raise ParseError("missing header", path=str(path))
    if len(events) != header[2]:
        raise ParseError(f"header announces {header[2]} events, found {len(events)}", path=str(path))
    if any(e.timestamp is not None for e in events):
        events.sort(key=lambda e: (e.timestamp if e.timestamp is not None else 0, e.line))
    return Stream(header[0], header[1], events)


def write_stream(path: PathLike, m: int, n: int, events: Iterable[Sequence]) -> Path:
    """Events as 0-based (i, j, theta[, timestamp]); written 1-based."""
    rows = list(events)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{m} {n} {len(rows)}\n")
        for event in rows:
            i, j, theta = event[0], event[1], event[2]
            stamp = f" {int(event[3])}" if len(event) > 3 and event[3] is not None else ""
            f.write(f"{i + 1} {j + 1} {float(theta)!r}{stamp}\n")
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows), encoding="utf-8")
    return path
