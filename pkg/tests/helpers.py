"""Shared builders for the test-suite: random KKT systems, toy NLPs, OPF models."""
from __future__ import annotations

import functools

import numpy as np
import scipy.sparse as sp

from blockipm.kkt import AugmentedSystem
from blockipm.model import BlockDims, BlockNlp, MonomialBasis
from blockipm.opf import build_block_opf, generate_scenarios, load_case, resolve_case

INF = np.inf


def random_augmented(rng, N, n_x, n_u, m, free_slacks=0, density=0.4, spd=True):
    """Random augmented system with nonsingular ``G_x`` blocks and an SPD-perturbed Hessian."""
    def rand_sparse(a, b):
        return sp.csr_matrix(sp.random(a, b, density, random_state=int(rng.integers(2**31)))) if a and b \
            else sp.csr_matrix((a, b))

    Wxx, Wxu, Wuu = [], [], []
    for _ in range(N):
        B = rng.standard_normal((n_x + n_u, n_x + n_u))
        W = 0.1 * B @ B.T if spd else 0.5 * (B + B.T)
        Wxx.append(sp.csr_matrix(W[:n_x, :n_x]))
        Wxu.append(sp.csr_matrix(W[:n_x, n_x:]))
        Wuu.append(sp.csr_matrix(W[n_x:, n_x:]))
    Gx = [sp.csr_matrix(rng.standard_normal((n_x, n_x)) + 3.0 * np.sqrt(n_x) * np.eye(n_x)) for _ in range(N)]
    sigma_s = rng.uniform(0.1, 2.0, (N, m))
    sigma_s[:, :free_slacks] = 0.0
    return AugmentedSystem(
        N, n_x, n_u, m, Wxx, Wxu, Wuu, Gx,
        [rand_sparse(n_x, n_u) for _ in range(N)],
        [rand_sparse(m, n_x) for _ in range(N)],
        [rand_sparse(m, n_u) for _ in range(N)],
        rng.uniform(0.1, 1.0, (N, n_x)), rng.uniform(0.1, 1.0, n_u), sigma_s,
        rng.standard_normal((N, n_x)), rng.standard_normal(n_u), rng.standard_normal((N, m)),
        rng.standard_normal((N, n_x)), rng.standard_normal((N, m)),
    )


def toy_quadratic(N=1):
    """``min sum_i (x_i-1)^2 + (u-1)^2`` s.t. ``x_i - u = 0``, ``x, u >= 0``; one inequality ``-x <= 0``."""
    # d = (x, u); basis = [x^2, x, u^2, u, 1]
    basis = MonomialBasis(1, 1, [(0, 0), (0,), (1, 1), (1,), ()])
    dims = BlockDims(N, 1, 1, 1, basis.n_b)
    L_f = sp.csr_matrix([[1.0, -2.0, 1.0 / N, -2.0 / N, 1.0 + 1.0 / N]])
    L_g = sp.csr_matrix([[0.0, 1.0, 0.0, -1.0, 0.0]])
    L_h = sp.csr_matrix([[0.0, -1.0, 0.0, 0.0, 0.0]])
    return BlockNlp(dims, basis, L_f, L_g, L_h,
                    np.zeros(1), np.full(1, INF), np.zeros(1), np.full(1, INF),
                    np.zeros(1), np.full(1, INF),
                    np.full((N, 1), 3.0), np.full(1, 2.0), name="toy-quadratic")


def toy_lp():
    """``min x + u`` s.t. ``x - u = 0``, ``x + u - 1 <= 0``, ``x, u >= 0``; solution ``x = u = 0``."""
    basis = MonomialBasis(1, 1, [(0,), (1,), ()])
    dims = BlockDims(1, 1, 1, 1, basis.n_b)
    L_f = sp.csr_matrix([[1.0, 1.0, 0.0]])
    L_g = sp.csr_matrix([[1.0, -1.0, 0.0]])
    L_h = sp.csr_matrix([[1.0, 1.0, -1.0]])
    return BlockNlp(dims, basis, L_f, L_g, L_h,
                    np.zeros(1), np.full(1, INF), np.zeros(1), np.full(1, INF),
                    np.zeros(1), np.full(1, INF),
                    np.full((1, 1), 0.3), np.full(1, 0.3), name="toy-lp")


def toy_nonlinear(N=3, seed=0):
    """A small nonconvex-looking but well-posed block problem with per-block data.

    ``g_i = x_i0^3/3 + 2 x_i0 - u_0 - c_i = 0``, ``g_i1 = x_i1 + x_i0 u_1 - u_0 = 0``,
    objective ``sum (x_i0^2 + x_i1^2) + u_0^2 + u_1^2``, inequality ``x_i0 + u_1 <= 2``.
    """
    rng = np.random.default_rng(seed)
    # d = (x0, x1, u0, u1)
    monos = [(0, 0, 0), (0,), (2,), (1,), (0, 3), (0, 0), (1, 1), (2, 2), (3, 3), (3,), ()]
    basis = MonomialBasis(2, 2, monos, n_const=1)
    nb = basis.n_b
    dims = BlockDims(N, 2, 2, 1, nb)

    def row(entries):
        r = np.zeros(nb)
        for k, v in entries.items():
            r[k] = v
        return r

    L_f = sp.csr_matrix([row({5: 1.0, 6: 1.0, 7: 1.0 / N, 8: 1.0 / N})])
    L_g = sp.csr_matrix([row({0: 1.0 / 3.0, 1: 2.0, 2: -1.0, 11: -1.0}), row({3: 1.0, 4: 1.0, 2: -1.0})])
    L_h = sp.csr_matrix([row({1: 1.0, 9: 1.0, 10: -2.0})])
    data = {"const": rng.uniform(-0.5, 0.5, (1, N))}
    return BlockNlp(dims, basis, L_f, L_g, L_h,
                    np.full(2, -5.0), np.full(2, 5.0), np.full(2, -3.0), np.full(2, 3.0),
                    np.full(1, -INF), np.zeros(1),
                    np.zeros((N, 2)), np.array([0.5, 0.2]), data, name="toy-nonlinear")


@functools.lru_cache(maxsize=None)
def case(name):
    return load_case(resolve_case(name))


def opf_model(name="case9", N=1, sigma=0.0, seed=1, contingencies=()):
    c = case(name)
    return build_block_opf(c, generate_scenarios(c, N, sigma, list(contingencies), seed))
