"""Block-structured NLP, primal-dual iterates and KKT residuals.

The problem is

    min  sum_i f_i(x_i, u)
    s.t. g_i(x_i, u) = 0,  h_i(x_i, u) + s_i = 0,
         x_l <= x_i <= x_u,  u_l <= u <= u_u,  s_l <= s_i <= s_u,

where every block shares one expression tree: ``(f_i, g_i, h_i) = L . psi(x_i, u)``
with a common nonlinear basis ``psi`` and sparse maps ``L_f, L_g, L_h``.
Scenario data enters ``psi`` as per-block constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp

from .autodiff.dual import spmm, vstack


@dataclass(frozen=True)
class BlockDims:
    N: int
    n_x: int
    n_u: int
    m: int
    n_b: int

    def __post_init__(self):
        for name in ("N", "n_x", "n_u", "n_b"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.m < 0:
            raise ValueError("m must be >= 0")

    @property
    def n_d(self) -> int:
        return self.n_x + self.n_u

    def nvar_primal(self) -> int:
        return self.N * self.n_x + self.n_u

    def ncon(self) -> int:
        return self.N * (self.n_x + self.m)


class Basis(Protocol):
    """Evaluation kernel ``psi`` and its hand-written adjoint.

    ``d`` stacks ``(x_i, u)`` column-wise, shape ``(n_x + n_u, M)``; ``data`` maps
    names to per-block constants with ``M`` columns.  Both methods must be written
    in the op vocabulary of :mod:`blockipm.autodiff.dual` so they also run on dual
    numbers and index tracers.
    """

    n_b: int

    def evaluate(self, d, data): ...

    def adjoint(self, d, wbar, data): ...


@dataclass(frozen=True)
class BlockNlp:
    dims: BlockDims
    basis: Basis
    L_f: sp.csr_matrix
    L_g: sp.csr_matrix
    L_h: sp.csr_matrix
    x_lower: np.ndarray
    x_upper: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    s_lower: np.ndarray
    s_upper: np.ndarray
    x_start: np.ndarray  # (N, n_x)
    u_start: np.ndarray
    block_data: dict = field(default_factory=dict)  # name -> (k, N)
    objective_scale: float = 1.0
    name: str = "nlp"

    def __post_init__(self):
        d = self.dims
        for name, L, rows in (("L_f", self.L_f, 1), ("L_g", self.L_g, d.n_x), ("L_h", self.L_h, d.m)):
            if L.shape != (rows, d.n_b):
                raise ValueError(f"{name} has shape {L.shape}, expected {(rows, d.n_b)}")
        for name, v, n in (
            ("x", self.x_lower, d.n_x), ("x", self.x_upper, d.n_x),
            ("u", self.u_lower, d.n_u), ("u", self.u_upper, d.n_u),
            ("s", self.s_lower, d.m), ("s", self.s_upper, d.m),
        ):
            if np.shape(v) != (n,):
                raise ValueError(f"{name} bounds must have length {n}")
        if np.shape(self.x_start) != (d.N, d.n_x) or np.shape(self.u_start) != (d.n_u,):
            raise ValueError("start point has wrong shape")

    def group_data(self, lo: int, hi: int) -> dict:
        return {k: v[:, lo:hi] for k, v in self.block_data.items()}

    def stack(self, x, u, lo: int, hi: int) -> np.ndarray:
        """Columns ``(x_i, u)`` for blocks ``lo..hi-1``."""
        x = np.asarray(x)[lo:hi]
        return np.vstack([x.T, np.repeat(np.asarray(u)[:, None], hi - lo, axis=1)])


def total_dims(nlp_or_dims) -> tuple[int, int]:
    dims = getattr(nlp_or_dims, "dims", nlp_or_dims)
    return dims.nvar_primal(), dims.ncon()


@dataclass
class Iterate:
    """Primal-dual point.  Bound multipliers are two-sided; an infinite bound
    keeps its multiplier at exactly zero."""

    x: np.ndarray        # (N, n_x)
    u: np.ndarray        # (n_u,)
    s: np.ndarray        # (N, m)
    y: np.ndarray        # (N, n_x)
    z: np.ndarray        # (N, m)
    kappa_l: np.ndarray  # (N, n_x)
    kappa_u: np.ndarray
    nu_l: np.ndarray     # (N, m)
    nu_u: np.ndarray
    lam_l: np.ndarray    # (n_u,)
    lam_u: np.ndarray

    @classmethod
    def zeros(cls, dims: BlockDims) -> "Iterate":
        N, nx, nu, m = dims.N, dims.n_x, dims.n_u, dims.m
        return cls(
            x=np.zeros((N, nx)), u=np.zeros(nu), s=np.zeros((N, m)),
            y=np.zeros((N, nx)), z=np.zeros((N, m)),
            kappa_l=np.zeros((N, nx)), kappa_u=np.zeros((N, nx)),
            nu_l=np.zeros((N, m)), nu_u=np.zeros((N, m)),
            lam_l=np.zeros(nu), lam_u=np.zeros(nu),
        )

    # net multipliers; with lower bounds only these are the one-sided kappa, nu, lambda
    @property
    def kappa(self):
        return self.kappa_l - self.kappa_u

    @property
    def nu(self):
        return self.nu_l - self.nu_u

    @property
    def lam(self):
        return self.lam_l - self.lam_u

    def copy(self) -> "Iterate":
        return Iterate(**{k: np.array(v, copy=True) for k, v in vars(self).items()})

    def check(self, dims: BlockDims):
        N, nx, nu, m = dims.N, dims.n_x, dims.n_u, dims.m
        expect = {
            "x": (N, nx), "u": (nu,), "s": (N, m), "y": (N, nx), "z": (N, m),
            "kappa_l": (N, nx), "kappa_u": (N, nx), "nu_l": (N, m), "nu_u": (N, m),
            "lam_l": (nu,), "lam_u": (nu,),
        }
        for k, shape in expect.items():
            if np.shape(getattr(self, k)) != shape:
                raise ValueError(f"iterate field {k} has shape {np.shape(getattr(self, k))}, expected {shape}")


@dataclass
class KktResiduals:
    stationarity_x: np.ndarray
    stationarity_u: np.ndarray
    stationarity_s: np.ndarray
    primal_g: np.ndarray
    primal_h: np.ndarray
    complementarity: float

    def max_norms(self) -> dict:
        def inf(a):
            return float(np.max(np.abs(a))) if np.size(a) else 0.0
        return {
            "stationarity_x": inf(self.stationarity_x),
            "stationarity_u": inf(self.stationarity_u),
            "stationarity_s": inf(self.stationarity_s),
            "primal_g": inf(self.primal_g),
            "primal_h": inf(self.primal_h),
            "complementarity": float(self.complementarity),
        }

    @property
    def dual_infeasibility(self) -> float:
        n = self.max_norms()
        return max(n["stationarity_x"], n["stationarity_u"], n["stationarity_s"])

    @property
    def primal_infeasibility(self) -> float:
        n = self.max_norms()
        return max(n["primal_g"], n["primal_h"])


# ---------------------------------------------------------------------------
# block evaluation through the basis

def evaluate_blocks(nlp: BlockNlp, x, u, lo: int = 0, hi: int | None = None):
    """``(f, g, h)`` for blocks ``lo..hi-1``; shapes ``(M,)``, ``(M, n_x)``, ``(M, m)``."""
    hi = nlp.dims.N if hi is None else hi
    psi = nlp.basis.evaluate(nlp.stack(x, u, lo, hi), nlp.group_data(lo, hi))
    f = np.asarray(nlp.L_f @ psi).ravel()
    return f, np.asarray(nlp.L_g @ psi).T, np.asarray(nlp.L_h @ psi).T


def lagrangian_gradient(nlp: BlockNlp, x, u, y, z, obj_weight: float = 1.0, lo: int = 0, hi: int | None = None):
    """Per-block gradients of ``obj_weight f_i + y_i'g_i + z_i'h_i`` via the basis adjoint.

    Returns ``(grad_x (M, n_x), grad_u (M, n_u))``; the coupling gradient is the
    sum of the ``grad_u`` rows.
    """
    hi = nlp.dims.N if hi is None else hi
    wbar = (
        nlp.L_f.T @ np.full((1, hi - lo), float(obj_weight))
        + nlp.L_g.T @ np.asarray(y)[lo:hi].T
        + nlp.L_h.T @ np.asarray(z)[lo:hi].T
    )
    dbar = np.asarray(nlp.basis.adjoint(nlp.stack(x, u, lo, hi), np.asarray(wbar), nlp.group_data(lo, hi)))
    nx = nlp.dims.n_x
    return dbar[:nx].T, dbar[nx:].T


def eval_lagrangian(nlp: BlockNlp, it: Iterate) -> float:
    it.check(nlp.dims)
    f, g, h = evaluate_blocks(nlp, it.x, it.u)
    total = f + np.sum(it.y * g, axis=1) + np.sum(it.z * (h + it.s), axis=1)
    total = total - _bound_term(it.x, nlp.x_lower, nlp.x_upper, it.kappa_l, it.kappa_u).sum(axis=1)
    total = total - _bound_term(it.s, nlp.s_lower, nlp.s_upper, it.nu_l, it.nu_u).sum(axis=1)
    return float(np.sum(total) - np.sum(_bound_term(it.u, nlp.u_lower, nlp.u_upper, it.lam_l, it.lam_u)))


def _bound_term(v, lower, upper, mult_l, mult_u):
    """``mult_l (v - l) + mult_u (u - v)`` over finite bounds, elementwise."""
    has_l, has_u = np.isfinite(lower), np.isfinite(upper)
    out = np.where(has_l, mult_l * (v - np.where(has_l, lower, 0.0)), 0.0)
    return out + np.where(has_u, mult_u * (np.where(has_u, upper, 0.0) - v), 0.0)


@np.errstate(invalid="ignore")
def _complementarity(v, lower, upper, mult_l, mult_u, mu):
    has_l, has_u = np.isfinite(lower), np.isfinite(upper)
    worst = 0.0
    if np.any(has_l):
        r = (v - lower) * mult_l - mu
        worst = max(worst, float(np.max(np.abs(np.where(np.broadcast_to(has_l, np.shape(v)), r, 0.0)))))
    if np.any(has_u):
        r = (upper - v) * mult_u - mu
        worst = max(worst, float(np.max(np.abs(np.where(np.broadcast_to(has_u, np.shape(v)), r, 0.0)))))
    return worst


def kkt_error(nlp: BlockNlp, it: Iterate, mu: float = 0.0, values=None, gradients=None) -> KktResiduals:
    """Residuals of the barrier-perturbed KKT conditions at ``it``.

    ``values`` (f, g, h) and ``gradients`` (grad_x, grad_u) may be supplied when
    they are already available at ``it``.
    """
    it.check(nlp.dims)
    if values is None:
        values = evaluate_blocks(nlp, it.x, it.u)
    if gradients is None:
        gradients = lagrangian_gradient(nlp, it.x, it.u, it.y, it.z)
    _, g, h = values
    grad_x, grad_u = gradients
    return KktResiduals(
        stationarity_x=grad_x - it.kappa_l + it.kappa_u,
        stationarity_u=np.sum(grad_u, axis=0) - it.lam_l + it.lam_u,
        stationarity_s=it.z - it.nu_l + it.nu_u,
        primal_g=g,
        primal_h=h + it.s,
        complementarity=max(
            _complementarity(it.x, nlp.x_lower, nlp.x_upper, it.kappa_l, it.kappa_u, mu),
            _complementarity(it.s, nlp.s_lower, nlp.s_upper, it.nu_l, it.nu_u, mu),
            _complementarity(it.u, nlp.u_lower, nlp.u_upper, it.lam_l, it.lam_u, mu),
        ),
    )


# ---------------------------------------------------------------------------
# a generic polynomial basis, used for small test problems

class MonomialBasis:
    """Basis of monomials in ``d = (x, u)`` plus optional per-block constants.

    ``monomials`` is a list of index tuples into ``d`` (``()`` is the constant 1,
    ``(0, 0)`` is ``d_0^2``).  ``n_const`` extra basis entries are read from
    ``data["const"]`` so blocks can differ only through data.
    """

    def __init__(self, n_x: int, n_u: int, monomials, n_const: int = 0):
        self.n_x, self.n_u = n_x, n_u
        self.n_d = n_x + n_u
        self.monomials = [tuple(int(i) for i in mono) for mono in monomials]
        self.n_const = n_const
        self.n_b = len(self.monomials) + n_const
        # scatter map for the adjoint: one contribution row per (monomial, factor)
        rows, cols = [], []
        k = 0
        for mono in self.monomials:
            for idx in mono:
                rows.append(idx)
                cols.append(k)
                k += 1
        self._scatter = sp.csr_matrix((np.ones(k), (rows, cols)), shape=(self.n_d, k))
        self._n_contrib = k

    def _term(self, d, mono, M):
        if not mono:
            return np.ones((1, M))
        out = d[[mono[0]]]
        for idx in mono[1:]:
            out = out * d[[idx]]
        return out

    def evaluate(self, d, data):
        M = _ncols(d, data)
        parts = [self._term(d, mono, M) for mono in self.monomials]
        if self.n_const:
            parts.append(np.asarray(data["const"], dtype=float))
        return vstack(parts)

    def adjoint(self, d, wbar, data):
        M = _ncols(d, data)
        wbar = np.asarray(wbar, dtype=float)
        contrib = []
        for k, mono in enumerate(self.monomials):
            for t in range(len(mono)):
                rest = mono[:t] + mono[t + 1:]
                contrib.append(self._term(d, rest, M) * wbar[[k]])
        if not contrib:
            return np.zeros((self.n_d, M))
        return spmm(self._scatter, vstack(contrib))


def _ncols(d, data):
    shape = getattr(d, "shape", None)
    if shape is not None and len(shape) == 2:
        return shape[1]
    for v in (data or {}).values():
        return np.shape(v)[1]
    return 1
