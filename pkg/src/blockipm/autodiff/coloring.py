"""Sparsity patterns, greedy Jacobian/Hessian colorings and decompression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class RecoveryCollision(ValueError):
    """A nonzero cannot be read back unambiguously from the compressed product."""


@dataclass(frozen=True)
class SparsityPattern:
    rows: np.ndarray
    cols: np.ndarray
    shape: tuple

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ValueError("rows and cols differ in length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.shape[0] or cols.min() < 0 or cols.max() >= self.shape[1]:
                raise ValueError("pattern index out of range")
            order = np.lexsort((cols, rows))
            rows, cols = rows[order], cols[order]
            keep = np.ones(rows.size, dtype=bool)
            keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            rows, cols = rows[keep], cols[keep]
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))

    @classmethod
    def from_matrix(cls, A):
        A = sp.coo_matrix(A)
        return cls(A.row, A.col, A.shape)

    @classmethod
    def from_row_sets(cls, sets, ncols):
        rows = [r for r, s in enumerate(sets) for _ in s]
        cols = [c for s in sets for c in sorted(s)]
        return cls(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), (len(sets), ncols))

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    def to_csr(self, values=None) -> sp.csr_matrix:
        values = np.ones(self.nnz) if values is None else values
        # rows/cols are sorted row-major, so the csr arrays can be built directly
        indptr = np.zeros(self.shape[0] + 1, dtype=np.int64)
        np.add.at(indptr, self.rows + 1, 1)
        return sp.csr_matrix((np.asarray(values, dtype=float), self.cols, np.cumsum(indptr)), shape=self.shape)

    def dense_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.rows, self.cols] = True
        return mask

    def is_symmetric(self) -> bool:
        a = set(zip(self.rows.tolist(), self.cols.tolist()))
        return all((c, r) in a for r, c in a)

    def submatrix(self, row_range, col_range):
        """Pattern restricted to a row/column window, plus the selected slot indices."""
        r0, r1 = row_range
        c0, c1 = col_range
        sel = np.flatnonzero((self.rows >= r0) & (self.rows < r1) & (self.cols >= c0) & (self.cols < c1))
        return SparsityPattern(self.rows[sel] - r0, self.cols[sel] - c0, (r1 - r0, c1 - c0)), sel


@dataclass(frozen=True)
class Coloring:
    """Column coloring of a pattern and where each nonzero is read back.

    For slot ``k`` of the pattern, the value sits at row ``read_row[k]`` and
    color ``read_color[k]`` of the compressed product ``A @ seed``.
    """

    column_color: np.ndarray
    num_colors: int
    read_row: np.ndarray
    read_color: np.ndarray

    def seed_matrix(self) -> np.ndarray:
        n = self.column_color.size
        D = np.zeros((n, self.num_colors))
        D[np.arange(n), self.column_color] = 1.0
        return D

    def decompress(self, compressed: np.ndarray) -> np.ndarray:
        """Nonzero values from compressed products of shape ``(rows, M, p)``; returns ``(nnz, M)``."""
        return compressed[self.read_row, :, self.read_color]


def _greedy(order, forbidden_of, n):
    color = np.full(n, -1, dtype=np.int64)
    for v in order:
        forbidden = forbidden_of(v, color)
        c = 0
        while c in forbidden:
            c += 1
        color[v] = c
    return color


def color_jacobian(p: SparsityPattern) -> Coloring:
    """Greedy distance-2 coloring of the column-intersection graph, natural order."""
    n = p.shape[1]
    A = p.to_csr()
    conflict = (A.T @ A).tocsr()  # columns sharing a row
    col_nbrs = [conflict.indices[conflict.indptr[c]:conflict.indptr[c + 1]] for c in range(n)]

    def forbidden_of(v, color):
        return {color[w] for w in col_nbrs[v] if w != v and color[w] >= 0}

    color = _greedy(range(n), forbidden_of, n)
    num = int(color.max() + 1) if n else 0
    read_color = color[p.cols]
    slots = p.rows * max(num, 1) + read_color
    if np.unique(slots).size != slots.size:
        raise RecoveryCollision("two nonzeros of one row share a color")
    return Coloring(color, num, p.rows.copy(), read_color)


def _creates_bicolored_p4(v, c, nbrs, color):
    """Would giving ``v`` color ``c`` create a path on 4 vertices using only 2 colors?"""
    for w in nbrs[v]:
        cw = color[w]
        if cw < 0:
            continue
        # v at an end: v - w - x - y with color(x) == c and color(y) == color(w)
        for x in nbrs[w]:
            if x == v or color[x] != c:
                continue
            for y in nbrs[x]:
                if y != w and y != v and color[y] == cw:
                    return True
        # v inside: a - v - w - y with color(a) == color(w) and color(y) == c
        for a in nbrs[v]:
            if a == w or color[a] != cw:
                continue
            for y in nbrs[w]:
                if y != v and y != a and color[y] == c:
                    return True
    return False


def color_hessian(p: SparsityPattern) -> Coloring:
    """Greedy star coloring (proper, no bicolored 4-vertex path) for a symmetric pattern.

    Every off-diagonal nonzero ``(i, j)`` is read either directly at ``(i, color j)``
    or through symmetry at ``(j, color i)``; the star property guarantees one of the
    two slots is not shared with another nonzero.
    """
    if p.shape[0] != p.shape[1] or not p.is_symmetric():
        raise ValueError("Hessian coloring needs a square symmetric pattern")
    n = p.shape[0]
    nbrs = [[] for _ in range(n)]
    for r, c in zip(p.rows.tolist(), p.cols.tolist()):
        if r != c:
            nbrs[r].append(c)
    color = np.full(n, -1, dtype=np.int64)
    for v in range(n):
        taken = {color[w] for w in nbrs[v] if color[w] >= 0}
        c = 0
        while c in taken or _creates_bicolored_p4(v, c, nbrs, color):
            c += 1
        color[v] = c
    num = int(color.max() + 1) if n else 0

    # count[r][k]: pattern entries of row r (incl. diagonal) with column color k
    count = {}
    for r, c in zip(p.rows.tolist(), p.cols.tolist()):
        key = (r, int(color[c]))
        count[key] = count.get(key, 0) + 1
    read_row = np.empty(p.nnz, dtype=np.int64)
    read_color = np.empty(p.nnz, dtype=np.int64)
    for k, (i, j) in enumerate(zip(p.rows.tolist(), p.cols.tolist())):
        if count[(i, int(color[j]))] == 1:
            read_row[k], read_color[k] = i, color[j]
        elif count[(j, int(color[i]))] == 1:
            read_row[k], read_color[k] = j, color[i]
        else:
            raise RecoveryCollision(f"entry ({i}, {j}) is not recoverable")
    return Coloring(color, num, read_row, read_color)


def verify_coloring(p: SparsityPattern, coloring: Coloring, rng=None, trials: int = 3) -> float:
    """Max decompression error on random matrices with pattern ``p`` (symmetric if square+symmetric)."""
    rng = np.random.default_rng(rng)
    sym = p.shape[0] == p.shape[1] and p.is_symmetric()
    worst = 0.0
    for _ in range(trials):
        A = np.zeros(p.shape)
        A[p.rows, p.cols] = rng.standard_normal(p.nnz)
        if sym:
            A = np.triu(A) + np.triu(A, 1).T
        B = A @ coloring.seed_matrix()
        got = coloring.decompress(B[:, None, :])[:, 0]
        worst = max(worst, float(np.max(np.abs(got - A[p.rows, p.cols]), initial=0.0)))
    return worst
