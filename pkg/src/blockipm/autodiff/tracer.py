"""Index propagation through a basis kernel (conservative sparsity detection)."""
from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np


def _pairs(a, b):
    return frozenset((min(i, j), max(i, j)) for i in a for j in b)


class IndexTracer:
    """Rows of (input dependency set, Hessian pair set); values are ignored.

    Every row stands for one entry of a basis intermediate, shared by all
    columns of a batch: the blocks have a single expression tree, so one
    structural pass covers all of them.
    """

    __slots__ = ("deps", "hess")

    def __init__(self, deps, hess=None):
        self.deps = list(deps)
        self.hess = list(hess) if hess is not None else [frozenset()] * len(self.deps)

    @classmethod
    def inputs(cls, n):
        return cls([frozenset((i,)) for i in range(n)])

    @classmethod
    def constant(cls, n):
        return cls([frozenset()] * n)

    def __len__(self):
        return len(self.deps)

    def __getitem__(self, idx):
        rows = np.arange(len(self.deps))[idx]
        if np.ndim(rows) == 0:
            rows = [int(rows)]
        return IndexTracer([self.deps[r] for r in rows], [self.hess[r] for r in rows])

    def _coerce(self, other):
        if isinstance(other, IndexTracer):
            return other
        arr = np.asarray(other)
        if arr.ndim == 0 or arr.shape[0] == 1:
            return IndexTracer.constant(len(self))
        if arr.shape[0] != len(self):
            raise ValueError(f"row mismatch {arr.shape[0]} vs {len(self)}")
        return IndexTracer.constant(len(self))

    def __add__(self, other):
        other = self._coerce(other)
        return IndexTracer(
            [a | b for a, b in zip(self.deps, other.deps)],
            [a | b for a, b in zip(self.hess, other.hess)],
        )

    __radd__ = __add__

    def __sub__(self, other):
        return self + other

    def __rsub__(self, other):
        return self + other

    def __neg__(self):
        return self

    def __mul__(self, other):
        if not isinstance(other, IndexTracer):
            self._coerce(other)
            return self
        return IndexTracer(
            [a | b for a, b in zip(self.deps, other.deps)],
            [
                ha | hb | _pairs(da, db)
                for da, db, ha, hb in zip(self.deps, other.deps, self.hess, other.hess)
            ],
        )

    __rmul__ = __mul__

    def nonlinear(self):
        return IndexTracer(
            self.deps,
            [h | frozenset(combinations_with_replacement(sorted(d), 2)) for d, h in zip(self.deps, self.hess)],
        )

    def spmm(self, A):
        A = A.tocsr()
        deps, hess = [], []
        for r in range(A.shape[0]):
            cols = A.indices[A.indptr[r]:A.indptr[r + 1]]
            deps.append(frozenset().union(*(self.deps[c] for c in cols)))
            hess.append(frozenset().union(*(self.hess[c] for c in cols)))
        return IndexTracer(deps, hess)

    @staticmethod
    def concatenate(parts):
        deps, hess = [], []
        for q in parts:
            if not isinstance(q, IndexTracer):
                q = IndexTracer.constant(np.asarray(q).shape[0])
            deps.extend(q.deps)
            hess.extend(q.hess)
        return IndexTracer(deps, hess)

    __array_ufunc__ = None
