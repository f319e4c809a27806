"""Memory-traffic tallies shared by the matrix and vector kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

VALUE_BYTES = 8
INDEX_BYTES = 4


def spmv_traffic_bytes(n_rows: int, n_cols: int, nnz_per_row: float) -> float:
    """Bytes moved by one CSR multiply of an ``n_rows`` matrix with ``n_cols`` vectors.

    Values and vector entries are 8 bytes, row offsets and column indices 4 bytes.
    ``nnz_per_row`` is the real-valued average, so the result may be fractional.
    """
    n, m, c = n_rows, n_cols, nnz_per_row
    return n * (8 * m * (c + 1) + 4 * (3 * c + 1))


@dataclass
class TrafficCounter:
    """Per-solve tally of memory transfers and reductions.

    ``vector_reads``/``vector_writes`` count whole-vector transfers; one transfer of
    an N x m multivector is worth ``8*N*m`` bytes.
    """

    vector_reads: int = 0
    vector_writes: int = 0
    spmv_bytes: float = 0.0
    spmv_calls: int = 0
    reductions: list[tuple[int, int]] = field(default_factory=list)
    precond_applications: int = 0
    n_rows: int | None = None
    n_cols: int | None = None

    @property
    def vector_transfers(self) -> int:
        return self.vector_reads + self.vector_writes

    def vector_bytes(self) -> float:
        if self.n_rows is None or self.n_cols is None:
            raise ValueError("counter has no shape; set n_rows and n_cols")
        return float(VALUE_BYTES * self.n_rows * self.n_cols * self.vector_transfers)

    def add_vectors(self, reads: int, writes: int) -> None:
        if reads < 0 or writes < 0:
            raise ValueError("transfer counts must be non-negative")
        self.vector_reads += reads
        self.vector_writes += writes

    def add_reduction(self, n_dots: int, n_cols: int) -> None:
        self.reductions.append((n_dots, n_cols))

    def reduction_bytes(self) -> list[int]:
        return [VALUE_BYTES * m * k for k, m in self.reductions]

    def copy(self) -> "TrafficCounter":
        return TrafficCounter(
            self.vector_reads,
            self.vector_writes,
            self.spmv_bytes,
            self.spmv_calls,
            list(self.reductions),
            self.precond_applications,
            self.n_rows,
            self.n_cols,
        )

    def __sub__(self, other: "TrafficCounter") -> "TrafficCounter":
        if self.reductions[: len(other.reductions)] != other.reductions:
            raise ValueError("can only subtract an earlier snapshot of the same counter")
        return TrafficCounter(
            self.vector_reads - other.vector_reads,
            self.vector_writes - other.vector_writes,
            self.spmv_bytes - other.spmv_bytes,
            self.spmv_calls - other.spmv_calls,
            self.reductions[len(other.reductions):],
            self.precond_applications - other.precond_applications,
            self.n_rows,
            self.n_cols,
        )

    def as_dict(self) -> dict:
        return {
            "vector_reads": self.vector_reads,
            "vector_writes": self.vector_writes,
            "vector_transfers": self.vector_transfers,
            "spmv_bytes": self.spmv_bytes,
            "spmv_calls": self.spmv_calls,
            "reductions": [list(r) for r in self.reductions],
            "precond_applications": self.precond_applications,
        }
