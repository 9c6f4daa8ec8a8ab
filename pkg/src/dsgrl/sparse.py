"""Minimal compressed-sparse-row container used for adjacency matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeError


@dataclass(frozen=True, eq=False)
class CSR:
    """Row-compressed sparse matrix with sorted, duplicate-free column indices."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        for arr in (indptr, indices, data):
            arr.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))
        if indptr.shape != (self.shape[0] + 1,):
            raise ShapeError(f"indptr length {indptr.shape[0]} != rows + 1 = {self.shape[0] + 1}")
        if indices.shape != data.shape or indices.shape[0] != indptr[-1]:
            raise ShapeError("indices/data length disagrees with indptr[-1]")

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, sum_duplicates=True) -> "CSR":
        """Build from coordinate triples; duplicates are summed (or collapsed)."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.broadcast_to(np.asarray(vals, dtype=np.float64), rows.shape).ravel()
        n_rows, n_cols = int(shape[0]), int(shape[1])
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
                raise RangeError(f"coordinate outside {n_rows}x{n_cols}")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.ones(rows.size, dtype=bool)
            first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(first)
            if sum_duplicates:
                vals = np.add.reduceat(vals, starts)
            else:
                vals = vals[starts]
            rows, cols = rows[starts], cols[starts]
        counts = np.bincount(rows, minlength=n_rows)
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(indptr, cols, vals, (n_rows, n_cols))

    @classmethod
    def from_dense(cls, dense) -> "CSR":
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(rows, cols, dense[rows, cols], dense.shape)

    @classmethod
    def identity(cls, n: int) -> "CSR":
        idx = np.arange(n, dtype=np.int64)
        return cls(np.arange(n + 1, dtype=np.int64), idx, np.ones(n), (n, n))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_ids(), self.indices] = self.data
        return out

    def with_data(self, data) -> "CSR":
        return CSR(self.indptr, self.indices, data, self.shape)

    def transpose(self) -> "CSR":
        return CSR.from_coo(self.indices, self.row_ids(), self.data, self.shape[::-1])

    def is_symmetric(self, atol: float = 0.0) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        t = self.transpose()
        if not (np.array_equal(t.indptr, self.indptr) and np.array_equal(t.indices, self.indices)):
            return False
        return bool(np.all(np.abs(t.data - self.data) <= atol))

    def __repr__(self):
        return f"CSR(shape={self.shape}, nnz={self.nnz})"
