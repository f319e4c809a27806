"""Sparse matrices, multivectors, stencil generators and instrumented SpMV."""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .traffic import TrafficCounter, spmv_traffic_bytes

INDEX_LIMIT = 2**31 - 1


class MatrixMarketError(ValueError):
    """Malformed MatrixMarket input; ``line`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(eq=False)
class CsrMatrix:
    """Square sparse matrix in compressed-row storage.

    Indices are held as int64 arrays but traffic is accounted at 4 bytes per index.
    """

    n_rows: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _scipy: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        self.row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        n, ro, ci = self.n_rows, self.row_offsets, self.col_indices
        if n < 1:
            raise ValueError("matrix must have at least one row")
        if ro.shape != (n + 1,):
            raise ValueError(f"row_offsets must have length n_rows+1={n + 1}")
        if ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(self.values):
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(ci) and (ci.min() < 0 or ci.max() >= n):
            raise ValueError("column index out of range (matrix must be square)")
        # strictly increasing within a row: every step inside a row is positive
        steps = np.diff(ci)
        row_start = np.zeros(len(ci), dtype=bool)
        row_start[ro[:-1][ro[:-1] < len(ci)]] = True
        if len(ci) > 1 and np.any(steps[~row_start[1:]] <= 0):
            raise ValueError("column indices must be strictly increasing within each row")

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def nnz_per_row(self) -> float:
        return self.nnz / self.n_rows

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_rows)

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def bandwidth(self) -> int:
        """Largest |col - row| over stored entries."""
        rows = np.repeat(np.arange(self.n_rows), self.row_lengths())
        return int(np.abs(self.col_indices - rows).max()) if self.nnz else 0

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def to_scipy(self) -> sp.csr_matrix:
        if self._scipy is None:
            self._scipy = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets), shape=self.shape
            )
        return self._scipy

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @classmethod
    def from_scipy(cls, a) -> "CsrMatrix":
        a = sp.csr_matrix(a)
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got {a.shape}")
        a.sum_duplicates()
        a.sort_indices()
        return cls(a.shape[0], a.indptr, a.indices, a.data)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "CsrMatrix":
        return cls(n, np.arange(n + 1), np.arange(n), np.full(n, float(scale)))


class MultiVector:
    """Block of ``n_cols`` vectors of length ``n_rows`` stored row-interleaved.

    Element (i, c) lives at flat index ``i*n_cols + c``; ``array`` is the C-ordered
    ``(n_rows, n_cols)`` view of the same buffer.
    """

    __slots__ = ("array",)

    def __init__(self, array):
        a = np.asarray(array, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise ValueError("multivector data must be 1-D or 2-D")
        self.array = np.ascontiguousarray(a)

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int = 1) -> "MultiVector":
        return cls(np.zeros((n_rows, n_cols)))

    @classmethod
    def full(cls, n_rows: int, n_cols: int, value: float) -> "MultiVector":
        return cls(np.full((n_rows, n_cols), float(value)))

    @classmethod
    def from_flat(cls, data, n_rows: int, n_cols: int) -> "MultiVector":
        data = np.asarray(data, dtype=np.float64)
        if data.size != n_rows * n_cols:
            raise ValueError("len(data) must equal n_rows*n_cols")
        return cls(data.reshape(n_rows, n_cols))

    @property
    def n_rows(self) -> int:
        return self.array.shape[0]

    @property
    def n_cols(self) -> int:
        return self.array.shape[1]

    @property
    def data(self) -> np.ndarray:
        return self.array.reshape(-1)

    def column(self, c: int) -> "MultiVector":
        return MultiVector(self.array[:, c].copy())

    def copy(self) -> "MultiVector":
        return MultiVector(self.array.copy())

    def __repr__(self):
        return f"MultiVector(n_rows={self.n_rows}, n_cols={self.n_cols})"


def as_array(v) -> np.ndarray:
    """Return the ``(N, m)`` array behind a MultiVector or array-like."""
    if isinstance(v, MultiVector):
        return v.array
    a = np.asarray(v)
    return a[:, None] if a.ndim == 1 else a


def _check_index_range(n: int, nnz: int) -> None:
    if n > INDEX_LIMIT or nnz > INDEX_LIMIT:
        raise OverflowError(f"grid too large for 4-byte indices (N={n}, nnz={nnz})")


def _path_adjacency(n: int) -> sp.csr_matrix:
    return sp.diags([np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="csr")


def poisson_stats(*dims: int) -> tuple[int, int, int]:
    """(N, nnz, bandwidth) of the 5-/7-point stencil matrix on a grid, without building it."""
    if not dims or any(d < 1 for d in dims):
        raise ValueError("grid dimensions must be >= 1")
    n = math.prod(dims)
    nnz = n + sum(2 * (d - 1) * (n // d) for d in dims)
    # neighbour along axis k sits prod(dims[:k]) rows away
    bandwidth = max((math.prod(dims[:k]) for k, d in enumerate(dims) if d > 1), default=0)
    return n, nnz, bandwidth


def _stencil(dims: tuple[int, ...], diagonal: float) -> CsrMatrix:
    if any(d < 1 for d in dims):
        raise ValueError("grid dimensions must be >= 1")
    n, nnz, _ = poisson_stats(*dims)
    _check_index_range(n, nnz)
    # lexicographic ordering, first dimension fastest
    off = sp.csr_matrix((n, n))
    for axis, d in enumerate(dims):
        if d == 1:
            continue
        factors = [sp.identity(k, format="csr") for k in dims]
        factors[axis] = _path_adjacency(d)
        term = factors[-1]
        for f in reversed(factors[:-1]):
            term = sp.kron(term, f, format="csr")
        off = off + term
    a = (diagonal * sp.identity(n, format="csr") - off).tocsr()
    a.sort_indices()
    return CsrMatrix(n, a.indptr, a.indices, a.data)


def gen_poisson_7pt(nx: int, ny: int, nz: int) -> CsrMatrix:
    """7-point Laplacian on an nx x ny x nz grid, diagonal 6 everywhere."""
    return _stencil((nx, ny, nz), 6.0)


def gen_poisson_5pt(nx: int, ny: int) -> CsrMatrix:
    """5-point Laplacian on an nx x ny grid, diagonal 4 everywhere."""
    return _stencil((nx, ny), 4.0)


def _check_shapes(a: CsrMatrix, x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[0] != a.n_rows or y.shape[0] != a.n_rows:
        raise ValueError(
            f"dimension mismatch: matrix has {a.n_rows} rows, x {x.shape[0]}, y {y.shape[0]}"
        )
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"column count mismatch: x has {x.shape[1]}, y has {y.shape[1]}")
    if np.shares_memory(x, y):
        raise ValueError("x and y must not share storage")


def _count(a: CsrMatrix, m: int, counter: TrafficCounter | None) -> None:
    if counter is not None:
        counter.spmv_bytes += spmv_traffic_bytes(a.n_rows, m, a.nnz_per_row)
        counter.spmv_calls += 1


def spmv(a: CsrMatrix, x, y, counter: TrafficCounter | None = None) -> None:
    """y <- A x for every column of the multivector x."""
    xa, ya = as_array(x), as_array(y)
    _check_shapes(a, xa, ya)
    ya[...] = a.to_scipy() @ xa
    _count(a, xa.shape[1], counter)


def spmv_transpose(a: CsrMatrix, x, y, counter: TrafficCounter | None = None) -> None:
    """y <- A^T x; traffic is counted with the same CSR formula as :func:`spmv`."""
    xa, ya = as_array(x), as_array(y)
    _check_shapes(a, xa, ya)
    ya[...] = a.to_scipy().T @ xa
    _count(a, xa.shape[1], counter)


def read_matrix_market(path) -> CsrMatrix:
    """Read a coordinate MatrixMarket file (general or symmetric) into CSR.

    Symmetric files are expanded to full storage and duplicate entries are summed.
    """
    rows, cols, vals = [], [], []
    header = None
    size = None
    expected = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if lineno == 1:
                header = line.lower().split()
                if len(header) < 5 or header[0] != "%%matrixmarket" or header[1] != "matrix":
                    raise MatrixMarketError("missing %%MatrixMarket matrix header", lineno)
                if header[2] != "coordinate":
                    raise MatrixMarketError(f"unsupported format {header[2]!r}", lineno)
                if header[3] not in ("real", "integer", "pattern", "double"):
                    raise MatrixMarketError(f"unsupported field {header[3]!r}", lineno)
                if header[4] not in ("general", "symmetric"):
                    raise MatrixMarketError(f"unsupported symmetry {header[4]!r}", lineno)
                continue
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            if size is None:
                try:
                    nr, nc, expected = (int(t) for t in parts)
                except ValueError:
                    raise MatrixMarketError(f"bad size line {line!r}", lineno) from None
                if nr != nc:
                    raise MatrixMarketError(f"matrix is not square ({nr}x{nc})", lineno)
                size = nr
                continue
            try:
                i, j = int(parts[0]), int(parts[1])
                v = 1.0 if header[3] == "pattern" else float(parts[2])
            except (ValueError, IndexError):
                raise MatrixMarketError(f"bad entry {line!r}", lineno) from None
            if not (1 <= i <= size and 1 <= j <= size):
                raise MatrixMarketError(f"index ({i}, {j}) outside {size}x{size}", lineno)
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(v)
    if header is None or size is None:
        raise MatrixMarketError("file ended before the size line")
    if len(vals) != expected:
        raise MatrixMarketError(f"expected {expected} entries, found {len(vals)}")
    r = np.array(rows, dtype=np.int64)
    c = np.array(cols, dtype=np.int64)
    v = np.array(vals, dtype=np.float64)
    if header[4] == "symmetric":
        off = r != c
        r, c, v = np.concatenate([r, c[off]]), np.concatenate([c, r[off]]), np.concatenate([v, v[off]])
    _check_index_range(size, len(v))
    a = sp.coo_matrix((v, (r, c)), shape=(size, size)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return CsrMatrix(size, a.indptr, a.indices, a.data)


def write_matrix_market(a: CsrMatrix, path) -> None:
    """Write ``a`` as a general coordinate MatrixMarket file (values in repr precision)."""
    rows = np.repeat(np.arange(a.n_rows), a.row_lengths())
    with open(Path(path), "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{a.n_rows} {a.n_rows} {a.nnz}\n")
        for i, j, v in zip(rows, a.col_indices, a.values):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
