import numpy as np
import pytest
import scipy.sparse as sp

from helpers import opf_model, toy_nonlinear, toy_quadratic

from blockipm import BlockDims, BlockNlp, Iterate, eval_lagrangian, kkt_error, total_dims
from blockipm.model import MonomialBasis, evaluate_blocks, lagrangian_gradient


def test_dims_validation_and_totals():
    d = BlockDims(4, 3, 2, 5, 7)
    assert d.n_d == 5
    assert total_dims(d) == (4 * 3 + 2, 4 * (3 + 5))
    with pytest.raises(ValueError):
        BlockDims(0, 1, 1, 0, 1)
    with pytest.raises(ValueError):
        BlockDims(1, 1, 1, -1, 1)


def test_nlp_shape_checks():
    nlp = toy_quadratic(2)
    with pytest.raises(ValueError):
        BlockNlp(**{**vars(nlp), "L_g": sp.csr_matrix((2, nlp.dims.n_b))})
    with pytest.raises(ValueError):
        BlockNlp(**{**vars(nlp), "x_start": np.zeros((3, 1))})
    with pytest.raises(ValueError):
        BlockNlp(**{**vars(nlp), "u_lower": np.zeros(2)})


def test_monomial_basis_values_and_adjoint():
    b = MonomialBasis(1, 1, [(0, 0, 1), (1,), ()])
    d = np.array([[2.0, -1.0], [3.0, 0.5]])
    psi = b.evaluate(d, {})
    np.testing.assert_allclose(psi, [[12.0, 0.5], [3.0, 0.5], [1.0, 1.0]])
    w = np.array([[1.0, 1.0], [2.0, 0.0], [5.0, 5.0]])
    # d/dx (x^2 u) = 2xu, d/du = x^2 + 2
    np.testing.assert_allclose(b.adjoint(d, w, {}), [[12.0, -1.0], [6.0, 1.0]])


def test_iterate_check_and_copy():
    d = BlockDims(2, 3, 1, 2, 4)
    it = Iterate.zeros(d)
    it.check(d)
    c = it.copy()
    c.x[0, 0] = 5.0
    assert it.x[0, 0] == 0.0
    it.z = np.zeros((2, 3))
    with pytest.raises(ValueError):
        it.check(d)


def test_lagrangian_gradient_by_finite_differences():
    nlp = toy_nonlinear(3)
    rng = np.random.default_rng(0)
    d = nlp.dims
    it = Iterate.zeros(d)
    it.x = rng.uniform(-1, 1, (d.N, d.n_x))
    it.u = rng.uniform(-1, 1, d.n_u)
    it.y = rng.standard_normal((d.N, d.n_x))
    it.z = rng.standard_normal((d.N, d.m))
    it.s = rng.uniform(0.1, 1, (d.N, d.m))
    gx, gu = lagrangian_gradient(nlp, it.x, it.u, it.y, it.z)
    eps = 1e-6
    for i in range(d.N):
        for j in range(d.n_x):
            p, m = it.copy(), it.copy()
            p.x[i, j] += eps
            m.x[i, j] -= eps
            assert (eval_lagrangian(nlp, p) - eval_lagrangian(nlp, m)) / (2 * eps) == pytest.approx(gx[i, j], abs=1e-6)
    for j in range(d.n_u):
        p, m = it.copy(), it.copy()
        p.u[j] += eps
        m.u[j] -= eps
        assert (eval_lagrangian(nlp, p) - eval_lagrangian(nlp, m)) / (2 * eps) == pytest.approx(gu[:, j].sum(), abs=1e-6)


def test_kkt_error_at_known_solution():
    # toy quadratic: x = u = 1, y = 0 solves it with inactive bounds
    nlp = toy_quadratic(2)
    it = Iterate.zeros(nlp.dims)
    it.x[:] = 1.0
    it.u[:] = 1.0
    it.s[:] = 1.0   # h = -x = -1, s = 1
    r = kkt_error(nlp, it)
    norms = r.max_norms()
    assert r.primal_infeasibility == 0.0 and r.dual_infeasibility == pytest.approx(0.0, abs=1e-14)
    assert norms["complementarity"] == 0.0
    it.x[0, 0] = 2.0
    assert kkt_error(nlp, it).primal_infeasibility == pytest.approx(1.0)


def test_evaluate_blocks_windows():
    nlp = opf_model("case9", 4, 0.1).nlp
    f, g, h = evaluate_blocks(nlp, nlp.x_start, nlp.u_start)
    f2, g2, h2 = evaluate_blocks(nlp, nlp.x_start, nlp.u_start, 1, 3)
    np.testing.assert_array_equal(f[1:3], f2)
    np.testing.assert_array_equal(g[1:3], g2)
    np.testing.assert_array_equal(h[1:3], h2)
    assert g.shape == (4, nlp.dims.n_x) and h.shape == (4, nlp.dims.m)
