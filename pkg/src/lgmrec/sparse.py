"""Compressed sparse row matrices.

The graph operators (interaction matrix, bipartite adjacency, normalized
adjacency) are stored in CSR form. Construction validates the structural
invariants once; products are delegated to scipy's C routines.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError


class SparseMatrixCSR:
    """Immutable CSR matrix with float64 values.

    Invariants, checked at construction:
      * row_ptr is non-decreasing, row_ptr[0] == 0, row_ptr[rows] == nnz
      * column indices lie in [0, cols) and strictly increase within a row
    """

    __slots__ = ("rows", "cols", "row_ptr", "col_idx", "values", "_scipy", "_scipy_t")

    def __init__(self, rows: int, cols: int, row_ptr, col_idx, values):
        self.rows = int(rows)
        self.cols = int(cols)
        self.row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self._scipy = None
        self._scipy_t = None
        self._validate()

    def _validate(self) -> None:
        if self.rows < 0 or self.cols < 0:
            raise DimensionError("negative matrix dimensions")
        if self.row_ptr.shape != (self.rows + 1,):
            raise DimensionError(
                f"row_ptr has length {self.row_ptr.shape[0]}, expected rows+1={self.rows + 1}"
            )
        if self.row_ptr[0] != 0:
            raise DimensionError("row_ptr[0] must be 0")
        if np.any(np.diff(self.row_ptr) < 0):
            raise DimensionError("row_ptr must be non-decreasing")
        nnz = int(self.row_ptr[-1])
        if self.col_idx.shape != (nnz,) or self.values.shape != (nnz,):
            raise DimensionError("col_idx/values length must equal row_ptr[rows]")
        if nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.cols:
                raise DimensionError("column index out of range")
            # strictly increasing within each row: diffs may only be <= 0 at row starts
            diffs = np.diff(self.col_idx)
            starts = self.row_ptr[1:-1]  # positions where a new row begins
            bad = diffs <= 0
            bad[starts[(starts > 0) & (starts < nnz)] - 1] = False
            if np.any(bad):
                raise DimensionError("column indices must strictly increase within each row")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_coo(cls, rows: int, cols: int, row_indices, col_indices, values) -> "SparseMatrixCSR":
        """Build from triplets. Duplicate (row, col) pairs are not allowed."""
        r = np.asarray(row_indices, dtype=np.int64)
        c = np.asarray(col_indices, dtype=np.int64)
        v = np.asarray(values, dtype=np.float64)
        if not (r.shape == c.shape == v.shape):
            raise DimensionError("coo triplet arrays must share a length")
        if r.size and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise IndexError("coo index out of range")
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if r.size > 1 and np.any((np.diff(r) == 0) & (np.diff(c) == 0)):
            raise DimensionError("duplicate (row, col) entries in coo input")
        row_ptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(row_ptr, r + 1, 1)
        np.cumsum(row_ptr, out=row_ptr)
        return cls(rows, cols, row_ptr, c, v)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrixCSR":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    def with_values(self, values) -> "SparseMatrixCSR":
        """Same sparsity pattern, new values."""
        return SparseMatrixCSR(self.rows, self.cols, self.row_ptr, self.col_idx, values)

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def to_scipy(self) -> sp.csr_matrix:
        if self._scipy is None:
            self._scipy = sp.csr_matrix(
                (self.values, self.col_idx, self.row_ptr), shape=(self.rows, self.cols)
            )
        return self._scipy

    def _scipy_transpose(self) -> sp.csr_matrix:
        if self._scipy_t is None:
            self._scipy_t = self.to_scipy().T.tocsr()
        return self._scipy_t

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def matmul_dense(self, dense: np.ndarray) -> np.ndarray:
        """self @ dense for a 2-d float64 array."""
        if dense.ndim != 2 or dense.shape[0] != self.cols:
            raise DimensionError(
                f"cannot multiply {self.rows}x{self.cols} CSR with dense of shape {dense.shape}"
            )
        return np.asarray(self.to_scipy() @ dense, dtype=np.float64)

    def transpose_matmul_dense(self, dense: np.ndarray) -> np.ndarray:
        """self.T @ dense; used by the backward pass of the sparse product."""
        if dense.ndim != 2 or dense.shape[0] != self.rows:
            raise DimensionError(
                f"cannot multiply transposed {self.rows}x{self.cols} CSR with dense of shape {dense.shape}"
            )
        return np.asarray(self._scipy_transpose() @ dense, dtype=np.float64)

    def __repr__(self) -> str:
        return f"SparseMatrixCSR({self.rows}x{self.cols}, nnz={self.nnz})"
