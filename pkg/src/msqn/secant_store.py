"""Sliding window of iterate/gradient pairs and the secant difference matrices.

A window of m+1 points (x_i, g_i) yields m secant columns
dX = X C and dG = G C, where C has columns summing to zero.
"""

from __future__ import annotations

from collections import deque

import numpy as np

COMBINE_SUM_TOL = 1e-12


def column_difference_matrix(n_points: int) -> np.ndarray:
    """Return the (n_points x n_points-1) consecutive-difference matrix.

    Column j is e_{j+1} - e_j, so X @ C stacks the consecutive column
    differences of X. Columns sum to zero and the matrix has full column
    rank.
    """
    n = int(n_points)
    if n < 1:
        raise ValueError("need at least one point")
    c = np.zeros((n, n - 1))
    for j in range(n - 1):
        c[j, j] = -1.0
        c[j + 1, j] = 1.0
    return c


class DifferenceOperator:
    """Maps a block of stored points to secant columns.

    Either the default consecutive-difference mode or an explicit matrix C
    with 1^T C = 0 and full column rank.
    """

    def __init__(self, matrix: np.ndarray | None = None):
        if matrix is None:
            self.matrix = None
            return
        c = np.asarray(matrix, dtype=float)
        if c.ndim != 2 or c.shape[1] != c.shape[0] - 1:
            raise ValueError(f"difference matrix must be (n, n-1), got {c.shape}")
        colsums = c.sum(axis=0)
        if np.max(np.abs(colsums)) > 1e-12 * max(1.0, np.abs(c).max()):
            raise ValueError("difference matrix columns must sum to zero")
        if np.linalg.matrix_rank(c) < c.shape[1]:
            raise ValueError("difference matrix must have full column rank")
        self.matrix = c

    @classmethod
    def consecutive(cls) -> "DifferenceOperator":
        return cls(None)

    @classmethod
    def explicit(cls, matrix: np.ndarray) -> "DifferenceOperator":
        return cls(matrix)

    @property
    def is_consecutive(self) -> bool:
        return self.matrix is None


class SecantHistory:
    """Bounded buffer of (x, g) pairs; keeps the capacity+1 most recent points."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.capacity = int(capacity)
        self.dimension = int(dim)
        self._entries: deque[tuple[np.ndarray, np.ndarray]] = deque(
            maxlen=self.capacity + 1
        )

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, x: np.ndarray, g: np.ndarray) -> "SecantHistory":
        """Append a pair, evicting the oldest entry beyond capacity+1 points."""
        x = np.asarray(x, dtype=float)
        g = np.asarray(g, dtype=float)
        if x.shape != (self.dimension,) or g.shape != (self.dimension,):
            raise ValueError(
                f"expected vectors of dimension {self.dimension}, "
                f"got x{x.shape} and g{g.shape}"
            )
        self._entries.append((x.copy(), g.copy()))
        return self

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the stored points as (X, G), each d x (#entries)."""
        if not self._entries:
            z = np.zeros((self.dimension, 0))
            return z, z.copy()
        xs = np.column_stack([x for x, _ in self._entries])
        gs = np.column_stack([g for _, g in self._entries])
        return xs, gs

    def deltas(
        self, diff: DifferenceOperator | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return (dX, dG) for the current window.

        With fewer than two entries both matrices have zero columns, so an
        optimizer can still take its reference step on iteration 0.
        """
        n = len(self._entries)
        if n < 2:
            z = np.zeros((self.dimension, 0))
            return z, z.copy()
        xs, gs = self.matrices()
        if diff is None or diff.is_consecutive:
            return np.diff(xs, axis=1), np.diff(gs, axis=1)
        c = diff.matrix
        if c.shape[0] != n:
            raise ValueError(
                f"difference matrix has {c.shape[0]} rows but history holds {n} entries"
            )
        return xs @ c, gs @ c

    def combine(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Affine combinations (X v, G v) for coefficients v summing to one."""
        v = np.asarray(v, dtype=float)
        n = len(self._entries)
        if v.shape != (n,):
            raise ValueError(f"expected {n} coefficients, got shape {v.shape}")
        if abs(v.sum() - 1.0) > COMBINE_SUM_TOL:
            raise ValueError(f"coefficients must sum to 1, got {v.sum()!r}")
        xs, gs = self.matrices()
        return xs @ v, gs @ v
