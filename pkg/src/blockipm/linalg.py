"""Factorizations and structured kernels used by the KKT strategies.

Block LU factors are stored as index permutations plus triangular factors,
``A[r][:, c] = L U``, so a solve can be split into separate permutation and
triangular passes (the reduction counts them).  Small blocks use dense LAPACK
LU, larger ones SuperLU.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

DENSE_BLOCK_MAX = 512
PIVOT_TOL = 1e-12
ZERO_EIG_TOL = 1e-14


class SingularBlockError(np.linalg.LinAlgError):
    def __init__(self, block: int, detail: str = ""):
        super().__init__(f"block {block} is singular{': ' + detail if detail else ''}")
        self.block = block


class ZeroPivotError(np.linalg.LinAlgError):
    def __init__(self, inertia, detail: str = ""):
        super().__init__(f"zero pivot (inertia {inertia}){': ' + detail if detail else ''}")
        self.inertia = inertia


@dataclass
class OpCounter:
    """Counts batched kernel passes: triangular solves (``spsm``) and structured products (``spmm``)."""

    spsm: int = 0
    spmm: int = 0

    def reset(self):
        self.spsm = 0
        self.spmm = 0


# ---------------------------------------------------------------------------
# per-block LU

@dataclass
class BlockLU:
    r: np.ndarray
    c: np.ndarray
    L: object  # ndarray or csr
    U: object
    dense: bool
    _transposed: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.r.size

    def factor(self, which: str, transpose: bool):
        T = self.L if which == "L" else self.U
        if not transpose or self.dense:
            return T
        if which not in self._transposed:
            self._transposed[which] = T.T.tocsr()
        return self._transposed[which]


def _factor_one(A, i, dense_max):
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"block {i} is not square")
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    rowmax = np.max(np.abs(Ad), axis=1) if n else np.zeros(0)
    if n and np.any(rowmax == 0.0):
        raise SingularBlockError(i, f"zero row {int(np.flatnonzero(rowmax == 0.0)[0])}")
    scale = float(rowmax.max()) if n else 1.0
    if n <= dense_max:
        p, L, U = sla.lu(Ad, p_indices=True)
        f = BlockLU(np.argsort(p), np.arange(n), L, U, True)
        piv = np.abs(np.diag(U))
    else:
        try:
            lu = spla.splu(sp.csc_matrix(A), diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularBlockError(i, str(exc)) from None
        f = BlockLU(np.argsort(lu.perm_r), np.argsort(lu.perm_c), lu.L.tocsr(), lu.U.tocsr(), False)
        piv = np.abs(lu.U.diagonal())
    if n and piv.min() < PIVOT_TOL * scale:
        raise SingularBlockError(i, f"pivot {piv.min():.3e} below threshold")
    return f


@dataclass
class BlockDiagFactor:
    """LU factors of ``M`` square blocks of size ``n``; ``A_i[r][:, c] = L_i U_i``."""

    blocks: list
    n: int
    offset: int = 0  # global index of the first block, for error messages

    @property
    def M(self) -> int:
        return len(self.blocks)

    # the four kinds of pass; B is stacked (M*n, k)
    def _split(self, B):
        B = np.asarray(B, dtype=float)
        if B.shape[0] != self.M * self.n:
            raise ValueError(f"rhs has {B.shape[0]} rows, expected {self.M * self.n}")
        return B.reshape(self.M, self.n, -1)

    def permute(self, B, which: str, inverse: bool = False, counter: OpCounter | None = None):
        """Apply the row (``'r'``) or column (``'c'``) permutation of every block.

        ``inverse=False`` gathers ``out = B[perm]``; ``inverse=True`` scatters ``out[perm] = B``.
        """
        Bs = self._split(B)
        out = np.empty_like(Bs)
        for j, f in enumerate(self.blocks):
            perm = f.r if which == "r" else f.c
            if inverse:
                out[j, perm] = Bs[j]
            else:
                out[j] = Bs[j, perm]
        if counter is not None:
            counter.spmm += 1
        return out.reshape(np.shape(B))

    def trisolve(self, B, which: str, transpose: bool = False, counter: OpCounter | None = None):
        """Solve with ``L`` or ``U`` (or their transposes) for every block."""
        Bs = self._split(B)
        out = np.empty_like(Bs)
        unit = which == "L"
        for j, f in enumerate(self.blocks):
            lower = (which == "L") != transpose
            rhs = Bs[j]
            if f.dense:
                out[j] = sla.solve_triangular(f.factor(which, False), rhs, lower=which == "L",
                                              trans=1 if transpose else 0, unit_diagonal=unit, check_finite=False)
            else:
                out[j] = spla.spsolve_triangular(f.factor(which, transpose), rhs, lower=lower, unit_diagonal=unit)
        if counter is not None:
            counter.spsm += 1
        return out.reshape(np.shape(B))

    def solve(self, B, transpose: bool = False, counter: OpCounter | None = None):
        """``G^{-1} B`` or ``G^{-T} B`` for the stacked block-diagonal ``G``."""
        B = np.asarray(B, dtype=float)
        vec = B.ndim == 1
        if vec:
            B = B[:, None]
        if not transpose:
            # A x = b  <=>  L U x[c] = b[r]
            w = self.permute(B, "r", counter=counter)
            w = self.trisolve(w, "L", counter=counter)
            w = self.trisolve(w, "U", counter=counter)
            out = self.permute(w, "c", inverse=True, counter=counter)
        else:
            # A^T x = b  <=>  U^T L^T x[r] = b[c]
            w = self.permute(B, "c", counter=counter)
            w = self.trisolve(w, "U", transpose=True, counter=counter)
            w = self.trisolve(w, "L", transpose=True, counter=counter)
            out = self.permute(w, "r", inverse=True, counter=counter)
        return out[:, 0] if vec else out

    def reconstruction_error(self, blocks) -> float:
        worst = 0.0
        for f, A in zip(self.blocks, blocks):
            Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
            LU = (f.L @ f.U)
            LU = LU.toarray() if sp.issparse(LU) else LU
            worst = max(worst, float(np.max(np.abs(Ad[f.r][:, f.c] - LU), initial=0.0)))
        return worst


def factor_block_diag(blocks, dense_max: int = DENSE_BLOCK_MAX, offset: int = 0) -> BlockDiagFactor:
    """Per-block LU with partial pivoting; raises :class:`SingularBlockError` with the block index."""
    blocks = list(blocks)
    if not blocks:
        raise ValueError("no blocks")
    n = blocks[0].shape[0]
    if any(A.shape != (n, n) for A in blocks):
        raise ValueError("blocks must be square and of equal size")
    return BlockDiagFactor([_factor_one(A, offset + i, dense_max) for i, A in enumerate(blocks)], n, offset)


def solve_block_diag(f: BlockDiagFactor, B, transpose: bool = False):
    return f.solve(B, transpose=transpose)


# ---------------------------------------------------------------------------
# products

def spgemm_condense(W, H, sigma) -> sp.csr_matrix:
    """``W + H^T diag(sigma) H``, pattern is the union of both terms."""
    W = sp.csr_matrix(W)
    H = sp.csr_matrix(H)
    sigma = np.asarray(sigma, dtype=float)
    if H.shape[0] != sigma.size or H.shape[1] != W.shape[1] or W.shape[0] != W.shape[1]:
        raise ValueError("non-conformable condensation operands")
    K = W + (H.T @ sp.diags(sigma) @ H)
    return sp.csr_matrix(K)


# ---------------------------------------------------------------------------
# symmetric factorizations with inertia

def _inertia_from_bk(lu, ipiv, threshold):
    """Inertia of the block-diagonal ``D`` left by ``?sytrf`` (lower storage, 1-based ipiv).

    Eigenvalues of ``D`` with magnitude at most ``threshold`` count as zero.
    """
    n = lu.shape[0]
    diag = np.diag(lu).copy()
    # the first index of each 2x2 pivot has ipiv < 0, and so does its partner
    first = np.zeros(n, dtype=bool)
    neg = np.flatnonzero(np.asarray(ipiv[:n]) < 0)
    skip = -1
    for j in neg:
        if j == skip:
            continue
        first[j] = True
        skip = j + 1
    eig = diag.copy()
    j = np.flatnonzero(first)
    if j.size:
        a, c, b = diag[j], diag[j + 1], lu[j + 1, j]
        mean, rad = 0.5 * (a + c), np.hypot(0.5 * (a - c), b)
        eig[j], eig[j + 1] = mean + rad, mean - rad
    zero = np.abs(eig) <= threshold
    return (int(np.sum((eig > 0) & ~zero)), int(np.sum((eig < 0) & ~zero)), int(np.sum(zero)))


@dataclass
class DenseSymFactor:
    n: int
    inertia: tuple
    kind: str            # "cholesky" or "bunch-kaufman"
    data: tuple = field(repr=False, default=())

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return b.copy()
        if self.kind == "cholesky":
            return sla.cho_solve(self.data, b, check_finite=False)
        lu, ipiv = self.data
        x, info = lapack.dsytrs(lu, ipiv, b, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"sytrs failed ({info})")
        return x


def factor_dense_sym(A, check_symmetry: bool = True, allow_singular: bool = False,
                     zero_tol: float = ZERO_EIG_TOL, try_cholesky: bool = True) -> DenseSymFactor:
    """Cholesky if positive definite, otherwise Bunch-Kaufman; both report inertia.

    A zero eigenvalue in ``D`` raises :class:`ZeroPivotError` (carrying the
    inertia) unless ``allow_singular``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n == 0:
        return DenseSymFactor(0, (0, 0, 0), "cholesky")
    scale = max(float(np.max(np.abs(A))), 1.0)
    if check_symmetry and np.max(np.abs(A - A.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    if try_cholesky:
        try:
            c = sla.cho_factor(A, lower=True, check_finite=False)
            if np.min(np.diag(c[0])) ** 2 > zero_tol * scale:
                return DenseSymFactor(n, (n, 0, 0), "cholesky", c)
        except np.linalg.LinAlgError:
            pass
    lwork = int(lapack.dsytrf_lwork(n, lower=1)[0])
    lu, ipiv, info = lapack.dsytrf(A, lower=1, lwork=max(lwork, 1))
    if info < 0:
        raise np.linalg.LinAlgError(f"sytrf argument error ({info})")
    inertia = _inertia_from_bk(lu, ipiv, zero_tol * scale)
    if inertia[2] > 0 and not allow_singular:
        raise ZeroPivotError(inertia)
    return DenseSymFactor(n, inertia, "bunch-kaufman", (lu, ipiv))


@dataclass
class SparseSymFactor:
    """Bordered block-diagonal symmetric factorization.

    The interior (non-border) variables split into independent components,
    each factored densely; the border is handled through its Schur
    complement.  Inertia follows from Haynsworth's additivity.
    """

    n: int
    inertia: tuple
    border: np.ndarray
    components: list = field(repr=False, default_factory=list)   # (index array, DenseSymFactor)
    A_bi: object = field(repr=False, default=None)              # border-interior coupling, csr
    schur: DenseSymFactor | None = field(repr=False, default=None)
    whole: DenseSymFactor | None = field(repr=False, default=None)
    interior: np.ndarray = field(repr=False, default=None)

    def _solve_interior(self, b_int):
        out = np.empty_like(b_int)
        for idx, fac in self.components:
            out[idx] = fac.solve(b_int[idx])
        return out

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.whole is not None:
            return self.whole.solve(b)
        x = np.empty_like(b)
        bi, bb = b[self.interior], b[self.border]
        t = self._solve_interior(bi)
        if self.border.size:
            xb = self.schur.solve(bb - self.A_bi @ t)
            xi = self._solve_interior(bi - self.A_bi.T @ xb)
            x[self.border] = xb
        else:
            xi = t
        x[self.interior] = xi
        return x


def factor_sparse_sym(A, border=None, zero_tol: float = ZERO_EIG_TOL) -> SparseSymFactor:
    """Symmetric indefinite factorization with inertia.

    ``border`` lists coupling variables (the controls of an arrowhead
    matrix).  Remaining variables are grouped into connected components that
    are factored independently with Bunch-Kaufman.  If a component is
    singular the whole matrix is factored densely instead, so singularity of
    ``A`` itself is what gets reported.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    diff = A - A.T
    if diff.nnz and np.max(np.abs(diff.data)) > 1e-12 * max(1.0, np.max(np.abs(A.data), initial=0.0)):
        raise ValueError("matrix is not symmetric")
    border = np.zeros(0, dtype=np.int64) if border is None else np.asarray(border, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[border] = False
    interior = np.flatnonzero(mask)
    A_ii = A[interior][:, interior]
    ncomp, labels = csgraph.connected_components(A_ii, directed=False)
    comps = []
    inertia = np.zeros(3, dtype=np.int64)
    A_bi = A[border][:, interior].tocsr()
    try:
        for k in range(ncomp):
            idx = np.flatnonzero(labels == k)
            fac = factor_dense_sym(A_ii[idx][:, idx].toarray(), check_symmetry=False, zero_tol=zero_tol,
                                   try_cholesky=False)
            comps.append((idx, fac))
            inertia += fac.inertia
        schur = None
        if border.size:
            S = A[border][:, border].toarray()
            for idx, fac in comps:
                C = A_bi[:, idx].toarray()
                if np.any(C):
                    S -= C @ fac.solve(C.T)
            S = 0.5 * (S + S.T)
            schur = factor_dense_sym(S, check_symmetry=False, zero_tol=zero_tol)
            inertia += schur.inertia
    except ZeroPivotError:
        whole = factor_dense_sym(A.toarray(), check_symmetry=False, zero_tol=zero_tol)
        return SparseSymFactor(n, whole.inertia, border, whole=whole)
    return SparseSymFactor(n, tuple(int(v) for v in inertia), border, comps, A_bi, schur, interior=interior)


def inertia_by_eigenvalues(A, tol: float = 1e-10):
    ev = np.linalg.eigvalsh(np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float))
    scale = max(1.0, float(np.max(np.abs(ev), initial=0.0)))
    return int(np.sum(ev > tol * scale)), int(np.sum(ev < -tol * scale)), int(np.sum(np.abs(ev) <= tol * scale))
