"""Batched derivative evaluation for block NLPs.

One structural pass over the basis kernel (with :class:`IndexTracer`) gives the
Jacobian pattern of ``[g; h]`` and the Lagrangian Hessian pattern.  Both are
shared by every block.  Jacobians are forward-mode products with a
distance-2 coloring seed; Hessians are forward-over-reverse products (dual
numbers pushed through the hand-written basis adjoint) with a star-coloring
seed.  All blocks of a group go through a single batched kernel call.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from .coloring import Coloring, SparsityPattern, color_hessian, color_jacobian
from .dual import DualBatch, spmm
from .tracer import IndexTracer

if TYPE_CHECKING:  # the model module itself imports the dual-number kernels
    from ..model import BlockDims, BlockNlp


class NonFiniteError(FloatingPointError):
    """A block produced NaN or Inf; ``block`` is its global index."""

    def __init__(self, block: int, what: str):
        super().__init__(f"non-finite {what} in block {block}")
        self.block = block
        self.what = what


@dataclass
class SharedPatternBatch:
    """``M`` sparse matrices with one pattern; ``values`` has shape ``(M, nnz)``."""

    pattern: SparsityPattern
    values: np.ndarray

    def __post_init__(self):
        self._indptr = self.pattern.to_csr().indptr

    def __len__(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.pattern.shape

    def matrix(self, j: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.values[j], self.pattern.cols, self._indptr), shape=self.pattern.shape)

    def matrices(self) -> list:
        return [self.matrix(j) for j in range(len(self))]

    def dense(self, j: int) -> np.ndarray:
        out = np.zeros(self.pattern.shape)
        out[self.pattern.rows, self.pattern.cols] = self.values[j]
        return out

    @staticmethod
    def concat(parts: list) -> "SharedPatternBatch":
        return SharedPatternBatch(parts[0].pattern, np.concatenate([q.values for q in parts], axis=0))


@dataclass
class StructureInfo:
    jac_pattern: SparsityPattern    # rows [g; h], columns d = (x, u)
    hess_pattern: SparsityPattern   # symmetric, n_d x n_d
    jac_coloring: Coloring
    hess_coloring: Coloring
    # sub-block views: (pattern, slot indices into the parent pattern)
    Gx: tuple
    Gu: tuple
    Hx: tuple
    Hu: tuple
    Wxx: tuple
    Wxu: tuple
    Wuu: tuple

    @property
    def p_jac(self) -> int:
        return self.jac_coloring.num_colors

    @property
    def p_hess(self) -> int:
        return self.hess_coloring.num_colors


def detect_sparsity(nlp: BlockNlp) -> tuple[SparsityPattern, SparsityPattern]:
    """Conservative Jacobian pattern of ``[g; h]`` and Hessian pattern of the Lagrangian."""
    d = nlp.dims
    tracer = IndexTracer.inputs(d.n_d)
    psi = nlp.basis.evaluate(tracer, nlp.group_data(0, 1))
    L_con = sp.vstack([nlp.L_g, nlp.L_h]).tocsr()
    cons = psi.spmm(L_con)
    jac = SparsityPattern.from_row_sets(cons.deps, d.n_d)
    # any basis entry reachable from f, g or h contributes its second derivatives
    used = np.unique(sp.vstack([nlp.L_f, L_con]).tocsr().indices)
    rows, cols = [], []
    for b in used:
        for i, j in psi.hess[b]:
            rows += [i, j]
            cols += [j, i]
    hess = SparsityPattern(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), (d.n_d, d.n_d))
    return jac, hess


def analyze(nlp: BlockNlp) -> StructureInfo:
    jac, hess = detect_sparsity(nlp)
    d = nlp.dims
    nx, nd, ncon = d.n_x, d.n_d, d.n_x + d.m
    return StructureInfo(
        jac_pattern=jac,
        hess_pattern=hess,
        jac_coloring=color_jacobian(jac),
        hess_coloring=color_hessian(hess),
        Gx=jac.submatrix((0, nx), (0, nx)),
        Gu=jac.submatrix((0, nx), (nx, nd)),
        Hx=jac.submatrix((nx, ncon), (0, nx)),
        Hu=jac.submatrix((nx, ncon), (nx, nd)),
        Wxx=hess.submatrix((0, nx), (0, nx)),
        Wxu=hess.submatrix((0, nx), (nx, nd)),
        Wuu=hess.submatrix((nx, nd), (nx, nd)),
    )


def dual_buffer_elements(dims: BlockDims, M: int, p_jac: int, p_hess: int) -> int:
    """Tangent elements held by the persistent dual buffers of one group of ``M`` blocks."""
    n_x, n_d, n_b = dims.n_x, dims.n_d, dims.n_b
    return (n_x + n_b + n_d) * M * p_jac + (2 * n_x + n_d + n_b) * M * p_hess


@dataclass(frozen=True)
class DualBuffers:
    """Named persistent tangent buffers of one group.

    Jacobian pass: seeded inputs ``(n_d)``, basis values ``(n_b)``, and the
    state-equation outputs ``(n_x)``; inequality rows are formed in the basis
    buffer's place and are not held separately.  Hessian pass: seeded inputs
    ``(n_d)``, basis adjoint ``(n_b)``, the state-multiplier image ``(n_x)``
    and the compressed state-gradient rows ``(n_x)``.
    """

    M: int
    shapes: dict

    @classmethod
    def for_group(cls, dims: BlockDims, M: int, p_jac: int, p_hess: int) -> "DualBuffers":
        return cls(M, {
            "jac_input": (dims.n_d, M, p_jac),
            "jac_basis": (dims.n_b, M, p_jac),
            "jac_state": (dims.n_x, M, p_jac),
            "hess_input": (dims.n_d, M, p_hess),
            "hess_basis_adjoint": (dims.n_b, M, p_hess),
            "hess_multiplier": (dims.n_x, M, p_hess),
            "hess_state_gradient": (dims.n_x, M, p_hess),
        })

    @property
    def elements(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes.values()))


def _check_finite(arr, lo, what, axis_blocks):
    bad = ~np.isfinite(arr)
    if bad.any():
        cols = np.flatnonzero(bad.any(axis=tuple(a for a in range(arr.ndim) if a != axis_blocks)))
        raise NonFiniteError(lo + int(cols[0]), what)


def batch_values(nlp: BlockNlp, info: StructureInfo | None, x, u, lo: int, hi: int):
    """``(f, g, h)`` for blocks ``lo..hi-1`` from one kernel call."""
    psi = nlp.basis.evaluate(nlp.stack(x, u, lo, hi), nlp.group_data(lo, hi))
    psi = np.asarray(psi)
    f = np.asarray(nlp.L_f @ psi).ravel()
    g = np.asarray(nlp.L_g @ psi)
    h = np.asarray(nlp.L_h @ psi)
    _check_finite(f[None, :], lo, "objective", 1)
    _check_finite(g, lo, "constraint", 1)
    _check_finite(h, lo, "constraint", 1)
    return f, g.T, h.T


def batch_jacobian(nlp: BlockNlp, info: StructureInfo, x, u, lo: int, hi: int):
    """Jacobian sub-blocks ``(G_x, G_u, H_x, H_u)`` of a group plus the values ``g, h``."""
    col = info.jac_coloring
    d = nlp.stack(x, u, lo, hi)
    dual = DualBatch.seed(d, col.seed_matrix())
    psi = nlp.basis.evaluate(dual, nlp.group_data(lo, hi))
    cons = _lift(spmm(sp.vstack([nlp.L_g, nlp.L_h]).tocsr(), psi), dual.p)
    _check_finite(cons.tangents, lo, "Jacobian", 1)
    vals = col.decompress(cons.tangents).T  # (M, nnz)
    nx = nlp.dims.n_x
    out = tuple(
        SharedPatternBatch(pat, vals[:, sel]) for pat, sel in (info.Gx, info.Gu, info.Hx, info.Hu)
    )
    return out, cons.values[:nx].T, cons.values[nx:].T


def _lift(v, p):
    """Kernels whose output does not depend on the seeded inputs return plain arrays."""
    return v if isinstance(v, DualBatch) else DualBatch.constant(np.asarray(v, dtype=float), p)


def multiplier_weights(nlp: BlockNlp, y, z, obj_weight: float, lo: int, hi: int) -> np.ndarray:
    return np.asarray(
        nlp.L_f.T @ np.full((1, hi - lo), float(obj_weight))
        + nlp.L_g.T @ np.asarray(y)[lo:hi].T
        + nlp.L_h.T @ np.asarray(z)[lo:hi].T
    )


def batch_hessian(nlp: BlockNlp, info: StructureInfo, x, u, y, z, obj_weight: float, lo: int, hi: int):
    """Lagrangian Hessian sub-blocks ``(W_xx, W_xu, W_uu)`` and gradients ``(grad_x, grad_u)``."""
    col = info.hess_coloring
    d = nlp.stack(x, u, lo, hi)
    dual = DualBatch.seed(d, col.seed_matrix())
    wbar = multiplier_weights(nlp, y, z, obj_weight, lo, hi)
    dbar = _lift(nlp.basis.adjoint(dual, wbar, nlp.group_data(lo, hi)), dual.p)
    _check_finite(dbar.tangents, lo, "Hessian", 1)
    p = info.hess_pattern
    lower = p.rows >= p.cols
    vals = np.empty((hi - lo, p.nnz))
    low_vals = dbar.tangents[info.hess_coloring.read_row[lower], :, info.hess_coloring.read_color[lower]].T
    vals[:, lower] = low_vals
    # mirror the lower triangle so every block matrix is exactly symmetric
    key = {(r, c): k for k, (r, c) in enumerate(zip(p.rows.tolist(), p.cols.tolist()))}
    upper_idx = np.flatnonzero(~lower)
    mirror = np.array([key[(int(p.cols[k]), int(p.rows[k]))] for k in upper_idx], dtype=np.int64)
    if upper_idx.size:
        vals[:, upper_idx] = vals[:, mirror]
    nx = nlp.dims.n_x
    W = tuple(SharedPatternBatch(pat, vals[:, sel]) for pat, sel in (info.Wxx, info.Wxu, info.Wuu))
    grad = dbar.values
    return W, (grad[:nx].T, grad[nx:].T)


def objective_gradient(nlp: BlockNlp, x, u, lo: int, hi: int):
    """Per-block ``(grad_x f_i, grad_u f_i)`` from one adjoint pass."""
    wbar = np.asarray(nlp.L_f.T @ np.ones((1, hi - lo)))
    dbar = np.asarray(nlp.basis.adjoint(nlp.stack(x, u, lo, hi), wbar, nlp.group_data(lo, hi)))
    nx = nlp.dims.n_x
    return dbar[:nx].T, dbar[nx:].T


@dataclass
class BlockDerivatives:
    """Everything a Newton step needs, per block (lists/arrays over all ``N`` blocks)."""

    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    grad_f_x: np.ndarray
    grad_f_u: np.ndarray      # (N, n_u), per-block contributions
    grad_L_x: np.ndarray
    grad_L_u: np.ndarray
    Gx: SharedPatternBatch
    Gu: SharedPatternBatch
    Hx: SharedPatternBatch
    Hu: SharedPatternBatch
    Wxx: SharedPatternBatch
    Wxu: SharedPatternBatch
    Wuu: SharedPatternBatch


class BlockEvaluator:
    """Evaluates values and derivatives of all blocks group by group.

    ``executor`` is a :class:`blockipm.executor.Executor`; without one, all
    blocks form a single group.
    """

    def __init__(self, nlp: BlockNlp, executor=None, info: StructureInfo | None = None):
        self.nlp = nlp
        self.info = info if info is not None else analyze(nlp)
        if executor is None:
            from ..executor import Executor
            executor = Executor(nlp.dims.N, groups=1)
        self.executor = executor

    @property
    def buffers(self) -> list:
        d = self.nlp.dims
        return [DualBuffers.for_group(d, hi - lo, self.info.p_jac, self.info.p_hess)
                for lo, hi in self.executor.partition.ranges]

    def dual_buffer_elements(self) -> int:
        return sum(b.elements for b in self.buffers)

    def values(self, x, u):
        parts = self.executor.map_blocks(lambda lo, hi: batch_values(self.nlp, self.info, x, u, lo, hi))
        return (
            np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]),
        )

    def objective_gradient(self, x, u):
        parts = self.executor.map_blocks(lambda lo, hi: objective_gradient(self.nlp, x, u, lo, hi))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def derivatives(self, x, u, y, z, obj_weight: float = 1.0) -> BlockDerivatives:
        nlp, info = self.nlp, self.info

        def work(lo, hi):
            f, _, _ = batch_values(nlp, info, x, u, lo, hi)
            jac, g, h = batch_jacobian(nlp, info, x, u, lo, hi)
            W, grad_L = batch_hessian(nlp, info, x, u, y, z, obj_weight, lo, hi)
            grad_f = objective_gradient(nlp, x, u, lo, hi)
            return f, g, h, grad_f, grad_L, jac, W

        parts = self.executor.map_blocks(work)
        cat = np.concatenate
        return BlockDerivatives(
            f=cat([p[0] for p in parts]),
            g=cat([p[1] for p in parts]),
            h=cat([p[2] for p in parts]),
            grad_f_x=cat([p[3][0] for p in parts]),
            grad_f_u=cat([p[3][1] for p in parts]),
            grad_L_x=cat([p[4][0] for p in parts]),
            grad_L_u=cat([p[4][1] for p in parts]),
            Gx=SharedPatternBatch.concat([p[5][0] for p in parts]),
            Gu=SharedPatternBatch.concat([p[5][1] for p in parts]),
            Hx=SharedPatternBatch.concat([p[5][2] for p in parts]),
            Hu=SharedPatternBatch.concat([p[5][3] for p in parts]),
            Wxx=SharedPatternBatch.concat([p[6][0] for p in parts]),
            Wxu=SharedPatternBatch.concat([p[6][1] for p in parts]),
            Wuu=SharedPatternBatch.concat([p[6][2] for p in parts]),
        )


@dataclass
class FdReport:
    """Outcome of a finite-difference comparison for one block.

    Relative errors are normwise: the largest entry error divided by
    ``max(1, largest reference entry)``.
    """

    block: int
    jac_abs: float
    grad_abs: float
    hess_abs: float
    jac_rel: float
    grad_rel: float
    hess_rel: float
    worst: dict

    @property
    def max_relative(self) -> float:
        return max(self.jac_rel, self.grad_rel, self.hess_rel)

    def __iter__(self):
        return iter((self.jac_abs, self.hess_abs))


def _compare(ad, fd, what, labels):
    err = np.abs(ad - fd)
    if err.size == 0:
        return 0.0, 0.0, None
    k = np.unravel_index(int(np.argmax(err)), err.shape)
    absmax = float(err[k])
    rel = absmax / max(1.0, float(np.max(np.abs(fd))))
    loc = {"what": what, "index": tuple(int(i) for i in k), "ad": float(ad[k]), "fd": float(fd[k])}
    if labels is not None:
        loc["variable"] = labels[k[-1]]
    return absmax, rel, loc


def finite_difference_check(nlp: BlockNlp, x, u, y, z, block: int = 0, eps: float = 1e-6, info=None,
                            labels=None) -> FdReport:
    """Compare AD derivatives of one block against central differences.

    Three comparisons are made: the colored constraint Jacobian against
    differences of ``[g; h]``, the adjoint Lagrangian gradient against
    differences of the scalar Lagrangian, and the colored Hessian against
    differences of the adjoint gradient.  ``labels`` optionally names the
    ``n_d`` variables of ``d = (x_i, u)`` for error reports.
    """
    info = info if info is not None else analyze(nlp)
    lo, hi = block, block + 1
    (Gx, Gu, Hx, Hu), _, _ = batch_jacobian(nlp, info, x, u, lo, hi)
    (Wxx, Wxu, Wuu), _ = batch_hessian(nlp, info, x, u, y, z, 1.0, lo, hi)
    J_ad = np.block([[Gx.dense(0), Gu.dense(0)], [Hx.dense(0), Hu.dense(0)]])
    W_ad = np.block([[Wxx.dense(0), Wxu.dense(0)], [Wxu.dense(0).T, Wuu.dense(0)]])

    d0 = nlp.stack(x, u, lo, hi)[:, 0]
    data = nlp.group_data(lo, hi)
    L_con = sp.vstack([nlp.L_g, nlp.L_h]).tocsr()
    wbar = multiplier_weights(nlp, y, z, 1.0, lo, hi)
    w = np.asarray(wbar).ravel()

    def basis(dv):
        return np.asarray(nlp.basis.evaluate(dv[:, None], data)).ravel()

    def grad(dv):
        return np.asarray(nlp.basis.adjoint(dv[:, None], wbar, data)).ravel()

    n = d0.size
    J_fd = np.zeros_like(J_ad)
    W_fd = np.zeros_like(W_ad)
    g_fd = np.zeros(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = eps
        bp, bm = basis(d0 + e), basis(d0 - e)
        J_fd[:, k] = np.asarray(L_con @ (bp - bm)).ravel() / (2 * eps)
        g_fd[k] = float(w @ (bp - bm)) / (2 * eps)
        W_fd[:, k] = (grad(d0 + e) - grad(d0 - e)) / (2 * eps)
    W_fd = 0.5 * (W_fd + W_fd.T)
    ja, jr, jl = _compare(J_ad, J_fd, "jacobian", labels)
    ga, gr, gl = _compare(grad(d0), g_fd, "gradient", labels)
    ha, hr, hl = _compare(W_ad, W_fd, "hessian", labels)
    worst = max(((jr, jl), (gr, gl), (hr, hl)), key=lambda t: t[0])[1] or {}
    return FdReport(block, ja, ga, ha, jr, gr, hr, worst)


def batch_eval(nlp: BlockNlp, X_M, u, group):
    """``(f (M,), g (n_x, M), h (m, M))`` for the blocks in ``group = (lo, hi)``.

    ``X_M`` holds the states of those blocks column-wise, ``n_x x M``.
    """
    lo, hi = group
    X_M = np.asarray(X_M, dtype=float)
    if X_M.shape != (nlp.dims.n_x, hi - lo):
        raise ValueError(f"states must be ({nlp.dims.n_x}, {hi - lo})")
    x = np.zeros((nlp.dims.N, nlp.dims.n_x))
    x[lo:hi] = X_M.T
    f, g, h = batch_values(nlp, None, x, u, lo, hi)
    return f, g.T, h.T
