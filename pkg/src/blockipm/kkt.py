"""Newton step of the barrier subproblem by three equivalent strategies.

augmented
    the full sparse symmetric system in ``(d, s, y, z)``, factored with a
    symmetric indefinite method;
condensed
    slacks and inequality multipliers eliminated, ``K = W + H' S_s H``,
    leaving the block-angular system in ``(d, y)``;
reduced
    states and state multipliers eliminated through ``Z = [-G_x^{-1} G_u; I]``,
    leaving the dense ``n_u x n_u`` matrix ``Z'KZ``.

Unknown ordering for the augmented system: for each block ``i`` the segment
``(x_i, s_i, y_i, z_i)``, then ``u`` at the end.  All strategies solve the
same (possibly regularized) system: the primal shift ``delta_w`` is applied to
``x`` and ``u`` only, the dual shift ``delta_c`` to ``y`` and ``z``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .executor import Executor, reduce_blocks
from .linalg import (
    BlockDiagFactor,
    OpCounter,
    SingularBlockError,
    ZeroPivotError,
    factor_block_diag,
    factor_dense_sym,
    factor_sparse_sym,
    spgemm_condense,
)

log = logging.getLogger(__name__)


class Strategy(enum.Enum):
    AUGMENTED = "augmented"
    CONDENSED = "condensed"
    REDUCED = "reduced"


class NonInteriorError(ValueError):
    """A bounded primal sits on or outside its bound."""


class LinearSolveFailure(RuntimeError):
    """The regularization budget was exhausted without correct inertia."""


# ---------------------------------------------------------------------------
# barrier diagonals and residuals

def barrier_terms(v, lower, upper, mult_l, mult_u, mu):
    """Diagonal ``Sigma`` and barrier gradient ``-mu/(v-l) + mu/(u-v)`` over finite bounds."""
    has_l = np.broadcast_to(np.isfinite(lower), np.shape(v))
    has_u = np.broadcast_to(np.isfinite(upper), np.shape(v))
    dl = np.where(has_l, v - np.where(has_l, lower, 0.0), 1.0)
    du = np.where(has_u, np.where(has_u, upper, 0.0) - v, 1.0)
    if np.any(dl <= 0) or np.any(du <= 0):
        raise NonInteriorError("iterate is not strictly interior")
    sigma = np.where(has_l, mult_l / dl, 0.0) + np.where(has_u, mult_u / du, 0.0)
    grad = np.where(has_l, -mu / dl, 0.0) + np.where(has_u, mu / du, 0.0)
    return sigma, grad


@dataclass
class AugmentedSystem:
    """Per-block pieces of the augmented Newton matrix and its right-hand side.

    The matrix is

        [ W + S_p   0     G'   H' ] [p_d]     [r1]
        [ 0         S_s   0    I  ] [p_s]  = -[r2]
        [ G         0     0    0  ] [p_y]     [r3]
        [ H         I     0    0  ] [p_z]     [r4]

    with ``W``'s coupling block ``W_uu = sum_i W_uu^i``.
    """

    N: int
    n_x: int
    n_u: int
    m: int
    Wxx: list
    Wxu: list
    Wuu: list
    Gx: list
    Gu: list
    Hx: list
    Hu: list
    sigma_x: np.ndarray   # (N, n_x)
    sigma_u: np.ndarray   # (n_u,)
    sigma_s: np.ndarray   # (N, m)
    r1x: np.ndarray       # (N, n_x)
    r1u: np.ndarray       # (n_u,)
    r2: np.ndarray        # (N, m)
    r3: np.ndarray        # (N, n_x)
    r4: np.ndarray        # (N, m)

    @property
    def seg(self) -> int:
        return 2 * self.n_x + 2 * self.m

    @property
    def dim(self) -> int:
        return self.N * self.seg + self.n_u

    def u_indices(self) -> np.ndarray:
        return self.N * self.seg + np.arange(self.n_u)

    def block_matrix(self, i: int, delta_w: float = 0.0, delta_c: float = 0.0) -> sp.csr_matrix:
        nx, m = self.n_x, self.m
        Ix = sp.identity(nx, format="csr")
        Im = sp.identity(m, format="csr")
        return sp.bmat([
            [self.Wxx[i] + sp.diags(self.sigma_x[i]) + delta_w * Ix, None, self.Gx[i].T, self.Hx[i].T],
            [None, sp.diags(self.sigma_s[i], shape=(m, m)), None, Im],
            [self.Gx[i], None, -delta_c * Ix if delta_c else sp.csr_matrix((nx, nx)), None],
            [self.Hx[i], Im, None, -delta_c * Im if delta_c else sp.csr_matrix((m, m))],
        ], format="csr")

    def border_block(self, i: int) -> sp.csr_matrix:
        return sp.vstack([
            self.Wxu[i], sp.csr_matrix((self.m, self.n_u)), self.Gu[i], self.Hu[i],
        ], format="csr")

    def corner(self, delta_w: float = 0.0) -> np.ndarray:
        Wuu = reduce_blocks([Wi.toarray() for Wi in self.Wuu])
        return Wuu + np.diag(self.sigma_u + delta_w)

    def matrix(self, delta_w: float = 0.0, delta_c: float = 0.0) -> sp.csr_matrix:
        diag = sp.block_diag([self.block_matrix(i, delta_w, delta_c) for i in range(self.N)], format="csr")
        B = sp.vstack([self.border_block(i) for i in range(self.N)], format="csr")
        return sp.bmat([[diag, B], [B.T, sp.csr_matrix(self.corner(delta_w))]], format="csr")

    def rhs(self) -> np.ndarray:
        segs = [np.concatenate([self.r1x[i], self.r2[i], self.r3[i], self.r4[i]]) for i in range(self.N)]
        return np.concatenate(segs + [self.r1u])

    def pack(self, step: "Step") -> np.ndarray:
        segs = [np.concatenate([step.p_x[i], step.p_s[i], step.p_y[i], step.p_z[i]]) for i in range(self.N)]
        return np.concatenate(segs + [step.p_u])

    def unpack(self, v) -> "Step":
        nx, m, N = self.n_x, self.m, self.N
        blocks = v[: N * self.seg].reshape(N, self.seg)
        return Step(
            p_x=blocks[:, :nx].copy(),
            p_u=v[N * self.seg:].copy(),
            p_s=blocks[:, nx:nx + m].copy(),
            p_y=blocks[:, nx + m:2 * nx + m].copy(),
            p_z=blocks[:, 2 * nx + m:].copy(),
        )

    def residual(self, step: "Step", delta_w: float = 0.0, delta_c: float = 0.0) -> float:
        """Normwise relative residual ``|A p + r| / (|A| |p| + |r|)`` in the max norm."""
        A = self.matrix(delta_w, delta_c)
        p = self.pack(step)
        r = self.rhs()
        res = A @ p + r
        a_norm = float(np.max(np.abs(A).sum(axis=1))) if A.nnz else 0.0
        denom = a_norm * float(np.max(np.abs(p), initial=0.0)) + float(np.max(np.abs(r), initial=0.0))
        return float(np.max(np.abs(res), initial=0.0)) / denom if denom > 0 else 0.0


@dataclass
class Step:
    p_x: np.ndarray
    p_u: np.ndarray
    p_s: np.ndarray
    p_y: np.ndarray
    p_z: np.ndarray
    strategy: Strategy | None = None
    delta_w: float = 0.0
    delta_c: float = 0.0
    fallback: bool = False
    inertia: tuple | None = None

    @property
    def p_d(self) -> np.ndarray:
        return np.concatenate([self.p_x.ravel(), self.p_u])

    def scale(self, a: float) -> "Step":
        return Step(self.p_x * a, self.p_u * a, self.p_s * a, self.p_y * a, self.p_z * a,
                    self.strategy, self.delta_w, self.delta_c, self.fallback, self.inertia)


def _as_list(batch):
    return batch.matrices() if hasattr(batch, "matrices") else list(batch)


def assemble_augmented(nlp, it, mu: float, derivs) -> AugmentedSystem:
    """Assemble the augmented Newton system at ``it`` from fresh block derivatives."""
    dims = nlp.dims
    sx, gx = barrier_terms(it.x, nlp.x_lower, nlp.x_upper, it.kappa_l, it.kappa_u, mu)
    su, gu = barrier_terms(it.u, nlp.u_lower, nlp.u_upper, it.lam_l, it.lam_u, mu)
    ss, gs = barrier_terms(it.s, nlp.s_lower, nlp.s_upper, it.nu_l, it.nu_u, mu)
    r1u = reduce_blocks(list(derivs.grad_L_u)) + gu
    return AugmentedSystem(
        N=dims.N, n_x=dims.n_x, n_u=dims.n_u, m=dims.m,
        Wxx=_as_list(derivs.Wxx), Wxu=_as_list(derivs.Wxu), Wuu=_as_list(derivs.Wuu),
        Gx=_as_list(derivs.Gx), Gu=_as_list(derivs.Gu), Hx=_as_list(derivs.Hx), Hu=_as_list(derivs.Hu),
        sigma_x=sx, sigma_u=su, sigma_s=ss,
        r1x=derivs.grad_L_x + gx, r1u=r1u, r2=it.z + gs,
        r3=np.array(derivs.g, dtype=float), r4=derivs.h + it.s,
    )


# ---------------------------------------------------------------------------
# condensation

@dataclass
class CondensedSystem:
    """Block-angular ``[K G'; G 0]`` with per-block ``K`` pieces and condensed rhs."""

    aug: AugmentedSystem
    delta_w: float
    Kxx: list
    Kxu: list
    Kuu_blocks: list     # W_uu^i + H_u' S_s H_u, before the root adds Sigma_u + delta_w
    K_uu: np.ndarray     # full coupling block
    r1x_hat: np.ndarray  # (N, n_x)
    r2_hat: np.ndarray   # (n_u,)
    r3_hat: np.ndarray   # (N, n_x)

    @property
    def Gx(self):
        return self.aug.Gx

    @property
    def Gu(self):
        return self.aug.Gu

    def matrix(self, delta_c: float = 0.0) -> sp.csr_matrix:
        """Ordering per block ``(x_i, y_i)``, then ``u``."""
        a = self.aug
        nx = a.n_x
        blocks, border = [], []
        for i in range(a.N):
            neg = -delta_c * sp.identity(nx) if delta_c else sp.csr_matrix((nx, nx))
            blocks.append(sp.bmat([[self.Kxx[i], a.Gx[i].T], [a.Gx[i], neg]], format="csr"))
            border.append(sp.vstack([self.Kxu[i], a.Gu[i]], format="csr"))
        diag = sp.block_diag(blocks, format="csr")
        B = sp.vstack(border, format="csr")
        return sp.bmat([[diag, B], [B.T, sp.csr_matrix(self.K_uu)]], format="csr")

    def rhs(self) -> np.ndarray:
        a = self.aug
        segs = [np.concatenate([self.r1x_hat[i], self.r3_hat[i]]) for i in range(a.N)]
        return np.concatenate(segs + [self.r2_hat])

    def u_indices(self) -> np.ndarray:
        a = self.aug
        return 2 * a.n_x * a.N + np.arange(a.n_u)

    def arrowhead(self) -> "ArrowheadBlocks":
        a = self.aug
        A_i = [np.block([[self.Kxx[i].toarray(), a.Gx[i].toarray().T],
                         [a.Gx[i].toarray(), np.zeros((a.n_x, a.n_x))]]) for i in range(a.N)]
        B_i = [np.hstack([self.Kxu[i].toarray().T, a.Gu[i].toarray().T]) for i in range(a.N)]
        return ArrowheadBlocks(self.K_uu.copy(), A_i, B_i)


def condense(aug: AugmentedSystem, delta_w: float = 0.0) -> CondensedSystem:
    """Eliminate ``(p_s, p_z)``: ``K = W + S_p + H' S_s H`` and ``r1 + H'(S_s r4 - r2)``."""
    nx = aug.n_x
    Kxx, Kxu, Kuu_blocks, r1x_hat, ru_parts = [], [], [], [], []
    for i in range(aug.N):
        W = sp.bmat([[aug.Wxx[i], aug.Wxu[i]], [aug.Wxu[i].T, aug.Wuu[i]]], format="csr")
        H = sp.hstack([aug.Hx[i], aug.Hu[i]], format="csr")
        K = spgemm_condense(W, H, aug.sigma_s[i])
        Kxx.append((K[:nx, :nx] + sp.diags(aug.sigma_x[i] + delta_w)).tocsr())
        Kxu.append(K[:nx, nx:].tocsr())
        Kuu_blocks.append(K[nx:, nx:].toarray())
        t = aug.sigma_s[i] * aug.r4[i] - aug.r2[i]
        r1x_hat.append(aug.r1x[i] + aug.Hx[i].T @ t)
        ru_parts.append(np.asarray(aug.Hu[i].T @ t))
    K_uu = reduce_blocks(Kuu_blocks) + np.diag(aug.sigma_u + delta_w)
    r2_hat = aug.r1u + reduce_blocks(ru_parts)
    return CondensedSystem(aug, delta_w, Kxx, Kxu, Kuu_blocks, K_uu,
                           np.array(r1x_hat), r2_hat, aug.r3.copy())


def recover_slack_dual(aug: AugmentedSystem, p_x, p_u):
    """``p_z = S_s (H p_d + r4) - r2`` and ``p_s = -S_s^{-1}(r2 + p_z)``.

    Where ``S_s`` vanishes (a slack without bounds) the second formula is
    0/0; the fourth block row gives the same value, ``p_s = -(r4 + H p_d)``.
    """
    p_z = np.empty_like(aug.r2)
    p_s = np.empty_like(aug.r2)
    for i in range(aug.N):
        Hp = aug.Hx[i] @ p_x[i] + aug.Hu[i] @ p_u
        sig = aug.sigma_s[i]
        p_z[i] = sig * (Hp + aug.r4[i]) - aug.r2[i]
        pos = sig > 0
        p_s[i] = np.where(pos, -(aug.r2[i] + p_z[i]) / np.where(pos, sig, 1.0), -(aug.r4[i] + Hp))
    return p_z, p_s


# ---------------------------------------------------------------------------
# reduction

@dataclass
class ReducedSystem:
    K_hat: np.ndarray
    rhs: np.ndarray
    n_batch: int
    workspace_elements: list      # per group, (2 M n_x + n_u) n_batch
    tile_counts: list             # OpCounter per tile, all groups
    asymmetry: float = 0.0        # |K - K'|_max / |K|_max before symmetrization


def _reduce_group(cs: CondensedSystem, fact: BlockDiagFactor, lo: int, hi: int, n_batch: int):
    """Per-block contributions ``[Z_i' K_i Z_i | rhs_i]`` for blocks ``lo..hi-1``."""
    a = cs.aug
    nx, nu, M = a.n_x, a.n_u, hi - lo
    Gu_stack = sp.vstack(a.Gu[lo:hi], format="csr")                   # (M nx, nu)
    Kxx_diag = sp.block_diag(cs.Kxx[lo:hi], format="csr")             # (M nx, M nx)
    Kxu_stack = sp.vstack(cs.Kxu[lo:hi], format="csr")                # (M nx, nu)

    # the three persistent buffers of a tile
    T_x = np.zeros((M * nx, n_batch))
    L_x = np.zeros((M * nx, n_batch))
    V = np.zeros((nu, n_batch))
    workspace = T_x.size + L_x.size + V.size
    out = [np.zeros((nu, nu + 1)) for _ in range(M)]
    tiles = []
    for c0 in range(0, nu, n_batch):
        c1 = min(nu, c0 + n_batch)
        w = c1 - c0
        cnt = OpCounter()
        V[:] = 0.0
        V[np.arange(c0, c1), np.arange(w)] = 1.0
        Vt = V[:, :w]
        # (1) T_x = -G_x^{-1} (G_u V)
        T_x[:, :w] = Gu_stack @ Vt
        cnt.spmm += 1
        T = fact.permute(T_x[:, :w], "r", counter=cnt)
        T = fact.trisolve(T, "L", counter=cnt)
        T = fact.trisolve(T, "U", counter=cnt)
        T_x[:, :w] = -fact.permute(T, "c", inverse=True, counter=cnt)
        # (2) [L_x; L_u] = K [T_x; V]; the L_u part accumulates per block
        L_x[:, :w] = Kxx_diag @ T_x[:, :w] + Kxu_stack @ Vt
        for j in range(M):
            Tj = T_x[j * nx:(j + 1) * nx, :w]
            out[j][:, c0:c1] += cs.Kxu[lo + j].T @ Tj + cs.Kuu_blocks[lo + j] @ Vt
        cnt.spmm += 1
        # (3) K_hat V = L_u - G_u' G_x^{-T} L_x
        Lm = fact.permute(L_x[:, :w], "c", counter=cnt)
        Lm = fact.trisolve(Lm, "U", transpose=True, counter=cnt)
        Lm = fact.trisolve(Lm, "L", transpose=True, counter=cnt)
        L_x[:, :w] = fact.permute(Lm, "r", inverse=True, counter=cnt)
        for j in range(M):
            out[j][:, c0:c1] -= a.Gu[lo + j].T @ L_x[j * nx:(j + 1) * nx, :w]
        cnt.spmm += 1
        tiles.append(cnt)

    # right-hand side pieces: G_u' G_x^{-T}(r1 - K_xx t) + K_ux t with t = G_x^{-1} r3
    r3 = cs.r3_hat[lo:hi].reshape(-1)
    t = fact.solve(r3)
    lam = fact.solve(cs.r1x_hat[lo:hi].reshape(-1) - Kxx_diag @ t, transpose=True)
    for j in range(M):
        sl = slice(j * nx, (j + 1) * nx)
        out[j][:, nu] = a.Gu[lo + j].T @ lam[sl] + cs.Kxu[lo + j].T @ t[sl]
    return out, workspace, tiles


def factor_state_blocks(cs_or_aug, executor: Executor) -> list:
    """Block LU of every ``G_x^i``, one :class:`BlockDiagFactor` per executor group."""
    aug = getattr(cs_or_aug, "aug", cs_or_aug)
    return executor.map_blocks(lambda lo, hi: factor_block_diag(aug.Gx[lo:hi], offset=lo))


def reduce(cs: CondensedSystem, facts, n_batch: int, executor: Executor | None = None) -> ReducedSystem:
    """Dense ``K_hat = Z'KZ`` and reduced rhs via tiles of ``n_batch`` unit columns."""
    a = cs.aug
    executor = executor or Executor(a.N, groups=1)
    if isinstance(facts, BlockDiagFactor):
        facts = [facts]
    if len(facts) != executor.groups:
        raise ValueError("one factor per executor group is required")
    n_batch = int(max(1, min(n_batch, a.n_u)))
    group_of = {rng: k for k, rng in enumerate(executor.partition.ranges)}
    info = {}

    def work(lo, hi):
        out, ws, tiles = _reduce_group(cs, facts[group_of[(lo, hi)]], lo, hi, n_batch)
        info[(lo, hi)] = (ws, tiles)
        return out

    total = executor.all_reduce_sum(work)
    nu = a.n_u
    K_hat = total[:, :nu] + np.diag(a.sigma_u + cs.delta_w)
    scale = max(float(np.max(np.abs(K_hat), initial=0.0)), 1e-300)
    asym = float(np.max(np.abs(K_hat - K_hat.T), initial=0.0)) / scale
    K_hat = 0.5 * (K_hat + K_hat.T)
    rhs = -cs.r2_hat + total[:, nu]
    ranges = executor.partition.ranges
    return ReducedSystem(
        K_hat, rhs, n_batch,
        [info[r][0] for r in ranges],
        [c for r in ranges for c in info[r][1]],
        asym,
    )


def recover_state_adjoint(cs: CondensedSystem, facts, p_u, executor: Executor | None = None):
    """``p_x = -G_x^{-1}(r3 + G_u p_u)`` and ``p_y = -G_x^{-T}(r1 + K_xx p_x + K_xu p_u)``."""
    a = cs.aug
    executor = executor or Executor(a.N, groups=1)
    if isinstance(facts, BlockDiagFactor):
        facts = [facts]
    nx = a.n_x
    group_of = {rng: k for k, rng in enumerate(executor.partition.ranges)}

    def work(lo, hi):
        f = facts[group_of[(lo, hi)]]
        rhs = np.concatenate([cs.r3_hat[i] + a.Gu[i] @ p_u for i in range(lo, hi)])
        px = -f.solve(rhs)
        r = np.concatenate([
            cs.r1x_hat[i] + cs.Kxx[i] @ px[(i - lo) * nx:(i - lo + 1) * nx] + cs.Kxu[i] @ p_u
            for i in range(lo, hi)
        ])
        py = -f.solve(r, transpose=True)
        return px.reshape(hi - lo, nx), py.reshape(hi - lo, nx)

    parts = executor.map_blocks(work)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ---------------------------------------------------------------------------
# Schur-complement oracle

@dataclass
class ArrowheadBlocks:
    A0: np.ndarray
    A: list   # [[K_xx, G_x'], [G_x, 0]]
    B: list   # [K_ux, G_u']  (n_u x 2 n_x)


def schur_oracle(blocks: ArrowheadBlocks) -> np.ndarray:
    """``A0 - sum_i B_i A_i^{-1} B_i'`` with each ``A_i`` factored as a dense symmetric matrix."""
    S = np.array(blocks.A0, dtype=float, copy=True)
    for Ai, Bi in zip(blocks.A, blocks.B):
        fac = factor_dense_sym(Ai)
        S -= Bi @ fac.solve(Bi.T)
    return S


def arrowhead_block_inverse(Kxx, Gx) -> np.ndarray:
    """Closed form of ``[[K, G'], [G, 0]]^{-1}`` for invertible ``G``."""
    Ginv = np.linalg.inv(Gx)
    return np.block([[np.zeros_like(Kxx), Ginv], [Ginv.T, -Ginv.T @ Kxx @ Ginv]])


# ---------------------------------------------------------------------------
# inertia correction and the strategy driver

@dataclass
class InertiaCorrector:
    """Escalating primal regularization: first try 0, then grow until inertia is right."""

    delta_init: float = 1e-4
    delta_min: float = 1e-20
    delta_max: float = 1e40
    grow_first: float = 100.0
    grow: float = 8.0
    shrink: float = 1.0 / 3.0
    delta_c_base: float = 1e-8
    last: float = 0.0
    events: list = field(default_factory=list)

    def sequence(self):
        yield 0.0
        delta = self.delta_init if self.last == 0.0 else max(self.delta_min, self.shrink * self.last)
        factor = self.grow_first if self.last == 0.0 else self.grow
        while delta <= self.delta_max:
            yield delta
            delta *= factor

    def delta_c(self, mu: float) -> float:
        return self.delta_c_base * mu ** 0.25

    def accept(self, delta: float):
        if delta > 0:
            self.last = delta


def _target_inertia(aug: AugmentedSystem, strategy: Strategy):
    N, nx, nu, m = aug.N, aug.n_x, aug.n_u, aug.m
    if strategy is Strategy.AUGMENTED:
        return (N * nx + nu + N * m, N * (nx + m), 0)
    return (N * nx + nu, N * nx, 0)


def _solve_symmetric(matrix_fn, rhs, border, target, corrector, mu):
    delta_c = 0.0
    for delta_w in corrector.sequence():
        A = matrix_fn(delta_w, delta_c)
        try:
            fac = factor_sparse_sym(A, border=border)
        except ZeroPivotError:
            # exactly singular even as a whole: perturb the dual block as well
            delta_c = corrector.delta_c(mu)
            continue
        if fac.inertia == target:
            corrector.accept(delta_w)
            return fac.solve(-rhs), delta_w, delta_c, fac.inertia
        if fac.inertia[2] > 0:
            delta_c = corrector.delta_c(mu)
    raise LinearSolveFailure("inertia correction failed")


def solve_newton(aug: AugmentedSystem, strategy: Strategy, corrector: InertiaCorrector | None = None,
                 mu: float = 0.0, n_batch: int = 16, executor: Executor | None = None,
                 record: dict | None = None) -> Step:
    """Newton step by the chosen strategy, with inertia correction.

    A singular ``G_x`` block makes the reduced strategy fall back to the
    augmented one for this call (logged).  ``record`` (optional dict) receives
    the last condensed and reduced systems and counters for inspection.
    """
    strategy = Strategy(strategy)
    corrector = corrector or InertiaCorrector()
    executor = executor or Executor(aug.N, groups=1)
    record = record if record is not None else {}

    if strategy is Strategy.AUGMENTED:
        v, dw, dc, inertia = _solve_symmetric(
            aug.matrix, aug.rhs(), aug.u_indices(), _target_inertia(aug, strategy), corrector, mu)
        step = aug.unpack(v)
        step.strategy, step.delta_w, step.delta_c, step.inertia = strategy, dw, dc, inertia
        return step

    if strategy is Strategy.CONDENSED:
        cache = {0.0: condense(aug, 0.0)}

        def mat(delta_w, delta_c):
            if delta_w not in cache:
                cache.clear()
                cache[delta_w] = condense(aug, delta_w)
            return cache[delta_w].matrix(delta_c)

        cs0 = cache[0.0]
        # the condensed rhs does not involve Sigma_p or delta_w
        v, dw, dc, inertia = _solve_symmetric(
            mat, cs0.rhs(), cs0.u_indices(), _target_inertia(aug, strategy), corrector, mu)
        nx = aug.n_x
        blocks = v[: 2 * nx * aug.N].reshape(aug.N, 2 * nx)
        p_x, p_y, p_u = blocks[:, :nx].copy(), blocks[:, nx:].copy(), v[2 * nx * aug.N:].copy()
        p_z, p_s = recover_slack_dual(aug, p_x, p_u)
        record["condensed"] = cache[dw]
        return Step(p_x, p_u, p_s, p_y, p_z, strategy, dw, dc, False, inertia)

    # reduced
    try:
        facts = factor_state_blocks(aug, executor)
    except SingularBlockError as exc:
        log.warning("singular state Jacobian in block %d: falling back to the augmented strategy", exc.block)
        corrector.events.append(("fallback", exc.block))
        step = solve_newton(aug, Strategy.AUGMENTED, corrector, mu, n_batch, executor, record)
        step.fallback = True
        return step
    for delta_w in corrector.sequence():
        cs = condense(aug, delta_w)
        red = reduce(cs, facts, n_batch, executor)
        try:
            fac = factor_dense_sym(red.K_hat, check_symmetry=False)
        except ZeroPivotError:
            continue
        if fac.inertia != (aug.n_u, 0, 0):
            continue
        corrector.accept(delta_w)
        p_u = fac.solve(red.rhs)
        p_x, p_y = recover_state_adjoint(cs, facts, p_u, executor)
        p_z, p_s = recover_slack_dual(aug, p_x, p_u)
        record["condensed"] = cs
        record["reduced"] = red
        return Step(p_x, p_u, p_s, p_y, p_z, strategy, delta_w, 0.0, False, fac.inertia)
    raise LinearSolveFailure("inertia correction failed")


def reduced_workspace_elements(M: int, n_x: int, n_u: int, n_batch: int) -> int:
    return (2 * M * n_x + n_u) * n_batch


def relative_difference(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), 1e-300)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


__all__ = [
    "ArrowheadBlocks", "AugmentedSystem", "CondensedSystem", "InertiaCorrector", "LinearSolveFailure",
    "NonInteriorError", "ReducedSystem", "Step", "Strategy", "arrowhead_block_inverse",
    "assemble_augmented", "barrier_terms", "condense", "factor_state_blocks", "recover_slack_dual",
    "recover_state_adjoint", "reduce", "solve_augmented", "reduced_workspace_elements", "relative_difference",
    "schur_oracle", "solve_newton",
]


def solve_augmented(aug: AugmentedSystem, corrector: InertiaCorrector | None = None, mu: float = 0.0) -> Step:
    """Step from the full augmented system (the reference strategy)."""
    return solve_newton(aug, Strategy.AUGMENTED, corrector, mu)
