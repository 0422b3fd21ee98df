"""Sparse direct solution of the condensed skeleton systems.

Thin, deterministic layer over SuperLU (scipy.sparse.linalg.splu) with a
fill-reducing column ordering.  Every solve checks its relative residual and
applies one step of iterative refinement if it exceeds the target.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_TARGET = 1e-10


class SingularMatrixError(RuntimeError):
    """Structural or numerical singularity; `index` points at the offender
    (row/column or pivot) when known."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def as_sparse(matrix):
    """Normalize to CSC with sorted, duplicate-free, in-bounds indices."""
    A = sp.csc_matrix(matrix)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    A.sum_duplicates()
    A.sort_indices()
    return A


class Factorization:
    """LU factors of a sparse matrix, reusable across right-hand sides."""

    def __init__(self, matrix):
        self.A = as_sparse(matrix)
        n = self.A.shape[0]

        empty_col = np.where(np.diff(self.A.indptr) == 0)[0]
        if empty_col.size:
            raise SingularMatrixError(
                f"structurally singular: column {empty_col[0]} is empty",
                index=int(empty_col[0]))
        row_counts = np.bincount(self.A.indices, minlength=n)
        empty_row = np.where(row_counts == 0)[0]
        if empty_row.size:
            raise SingularMatrixError(
                f"structurally singular: row {empty_row[0]} is empty",
                index=int(empty_row[0]))

        try:
            self._lu = spla.splu(self.A)
        except RuntimeError as err:  # SuperLU reports exact singularity this way
            raise SingularMatrixError(f"factorization failed: {err}") from err
        self.fill_factor = (self._lu.L.nnz + self._lu.U.nnz) / max(self.A.nnz, 1)
        umin = np.abs(self._lu.U.diagonal())
        self.pivot_min = float(umin.min()) if n else np.inf
        if self.pivot_min == 0.0:
            raise SingularMatrixError(
                "numerically singular: zero pivot",
                index=int(np.argmin(umin)))
        self.last_residual = None

    @property
    def shape(self):
        return self.A.shape

    def solve(self, rhs):
        """Solve A x = rhs; checks the relative residual and refines once if
        it misses RESIDUAL_TARGET."""
        b = np.asarray(rhs, dtype=np.float64)
        if b.shape != (self.A.shape[0],):
            raise ValueError(f"rhs shape {b.shape} does not match {self.A.shape}")
        norm_b = np.linalg.norm(b)
        if norm_b == 0.0:
            self.last_residual = 0.0
            return np.zeros_like(b)
        x = self._lu.solve(b)
        resid = np.linalg.norm(self.A @ x - b) / norm_b
        if resid > RESIDUAL_TARGET:
            x = x + self._lu.solve(b - self.A @ x)
            resid = np.linalg.norm(self.A @ x - b) / norm_b
        self.last_residual = float(resid)
        return x


def factorize(matrix):
    return Factorization(matrix)


def solve(matrix, rhs):
    """One-shot factorize-and-solve."""
    return factorize(matrix).solve(rhs)
