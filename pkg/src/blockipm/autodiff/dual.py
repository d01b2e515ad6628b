"""Batched dual numbers and the small op vocabulary basis kernels are written in.

A basis kernel only uses row indexing, ``+ - *``, :func:`sin`, :func:`cos`,
:func:`spmm` (constant sparse map applied to rows) and :func:`vstack`.  The same
kernel code then runs on plain ``(n, M)`` arrays, on :class:`DualBatch`
(forward mode, ``p`` tangents per entry) and on
:class:`~blockipm.autodiff.tracer.IndexTracer` (sparsity detection).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class DualBatch:
    """Matrix of dual numbers: values ``(n, M)`` and tangents ``(n, M, p)``.

    Column ``j`` is one block of the batch, tangent lane ``k`` one seed
    direction.  Arithmetic follows ``(a + eps a')(b + eps b') = ab + eps(ab' + a'b)``
    independently in every (column, lane) pair.
    """

    __slots__ = ("values", "tangents")
    __array_ufunc__ = None  # make ndarray * DualBatch dispatch to __rmul__

    def __init__(self, values, tangents):
        values = np.asarray(values, dtype=float)
        tangents = np.asarray(tangents, dtype=float)
        if tangents.shape[:2] != values.shape:
            raise ValueError(
                f"tangent shape {tangents.shape} does not extend value shape {values.shape}"
            )
        self.values = values
        self.tangents = tangents

    @classmethod
    def seed(cls, values, directions):
        """Seed every column of ``values`` (n, M) with the same ``directions`` (n, p)."""
        values = np.asarray(values, dtype=float)
        directions = np.asarray(directions, dtype=float)
        n, M = values.shape
        tangents = np.broadcast_to(directions[:, None, :], (n, M, directions.shape[1])).copy()
        return cls(values, tangents)

    @classmethod
    def constant(cls, values, p):
        values = np.asarray(values, dtype=float)
        return cls(values, np.zeros(values.shape + (p,)))

    @property
    def shape(self):
        return self.values.shape

    @property
    def p(self):
        return self.tangents.shape[2]

    @property
    def nelements(self):
        return self.values.size + self.tangents.size

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, idx):
        return DualBatch(self.values[idx], self.tangents[idx])

    def __neg__(self):
        return DualBatch(-self.values, -self.tangents)

    def __add__(self, other):
        if isinstance(other, DualBatch):
            return DualBatch(self.values + other.values, self.tangents + other.tangents)
        other = np.asarray(other, dtype=float)
        values = self.values + other
        return DualBatch(values, np.broadcast_to(self.tangents, values.shape + (self.p,)))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, DualBatch):
            return DualBatch(
                self.values * other.values,
                self.values[..., None] * other.tangents + self.tangents * other.values[..., None],
            )
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            return DualBatch(self.values * other, self.tangents * other)
        return DualBatch(self.values * other, self.tangents * other[..., None])

    __rmul__ = __mul__

    def __repr__(self):
        return f"DualBatch(shape={self.values.shape}, p={self.p})"


def sin(a):
    if isinstance(a, DualBatch):
        return DualBatch(np.sin(a.values), np.cos(a.values)[..., None] * a.tangents)
    if hasattr(a, "nonlinear"):
        return a.nonlinear()
    return np.sin(a)


def cos(a):
    if isinstance(a, DualBatch):
        return DualBatch(np.cos(a.values), -np.sin(a.values)[..., None] * a.tangents)
    if hasattr(a, "nonlinear"):
        return a.nonlinear()
    return np.cos(a)


def spmm(A, a):
    """Apply the constant sparse matrix ``A`` to the rows of ``a`` (the SpMM kernel)."""
    if isinstance(a, DualBatch):
        n, M, p = a.tangents.shape
        values = A @ a.values
        tangents = (A @ a.tangents.reshape(n, M * p)).reshape(A.shape[0], M, p)
        return DualBatch(np.asarray(values), np.asarray(tangents))
    if hasattr(a, "spmm"):
        return a.spmm(A)
    return np.asarray(A @ a)


def vstack(parts):
    """Concatenate row blocks of a common kind."""
    if any(isinstance(q, DualBatch) for q in parts):
        p = next(q.p for q in parts if isinstance(q, DualBatch))
        M = next(q.shape[1] for q in parts if isinstance(q, DualBatch))
        duals = [
            q if isinstance(q, DualBatch)
            else DualBatch.constant(np.broadcast_to(q, (q.shape[0], M)), p)
            for q in parts
        ]
        return DualBatch(
            np.concatenate([q.values for q in duals], axis=0),
            np.concatenate([q.tangents for q in duals], axis=0),
        )
    kinds = {type(q) for q in parts}
    for kind in kinds:
        if hasattr(kind, "concatenate"):
            return kind.concatenate(parts)
    return np.concatenate([np.asarray(q, dtype=float) for q in parts], axis=0)


def values_of(a):
    return a.values if isinstance(a, DualBatch) else np.asarray(a)


def as_csr(A) -> sp.csr_matrix:
    return sp.csr_matrix(A, dtype=float)
