import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from helpers import opf_model, toy_nonlinear, toy_quadratic

from blockipm.autodiff import (
    BlockEvaluator,
    DualBatch,
    DualBuffers,
    IndexTracer,
    NonFiniteError,
    SparsityPattern,
    analyze,
    batch_eval,
    batch_values,
    color_hessian,
    color_jacobian,
    cos,
    dual_buffer_elements,
    finite_difference_check,
    sin,
    spmm,
    verify_coloring,
    vstack,
)
from blockipm.executor import Executor
from blockipm.model import BlockNlp, evaluate_blocks, lagrangian_gradient


# ---------------------------------------------------------------------------
# dual numbers

def test_dual_product_rule_and_trig():
    rng = np.random.default_rng(0)
    a = DualBatch(rng.standard_normal((3, 4)), rng.standard_normal((3, 4, 2)))
    b = DualBatch(rng.standard_normal((3, 4)), rng.standard_normal((3, 4, 2)))
    c = a * b
    np.testing.assert_allclose(c.tangents, a.values[..., None] * b.tangents + a.tangents * b.values[..., None])
    s = sin(a)
    np.testing.assert_allclose(s.tangents, np.cos(a.values)[..., None] * a.tangents)
    q = cos(a) * 2.0 - a + 1.0
    np.testing.assert_allclose(q.tangents, -2 * np.sin(a.values)[..., None] * a.tangents - a.tangents)
    # ndarray on the left dispatches to the dual
    r = np.ones((3, 4)) * a
    assert isinstance(r, DualBatch)
    with pytest.raises(ValueError):
        DualBatch(np.zeros((2, 3)), np.zeros((2, 2, 1)))


def test_dual_spmm_vstack():
    rng = np.random.default_rng(1)
    a = DualBatch.seed(rng.standard_normal((3, 2)), np.eye(3))
    A = sp.random(4, 3, 0.6, random_state=0).tocsr()
    out = spmm(A, a)
    np.testing.assert_allclose(out.values, A @ a.values)
    np.testing.assert_allclose(out.tangents[:, 0, :], A.toarray())
    stacked = vstack([a, np.ones((1, 2))])
    assert stacked.shape == (4, 2) and np.all(stacked.tangents[3] == 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_dual_matches_analytic_derivative(x0, y0):
    # f = sin(x) y^2 + cos(x y)
    x = DualBatch(np.array([[x0]]), np.array([[[1.0, 0.0]]]))
    y = DualBatch(np.array([[y0]]), np.array([[[0.0, 1.0]]]))
    f = sin(x) * y * y + cos(x * y)
    want = [np.cos(x0) * y0 ** 2 - y0 * np.sin(x0 * y0), 2 * np.sin(x0) * y0 - x0 * np.sin(x0 * y0)]
    np.testing.assert_allclose(f.tangents[0, 0], want, atol=1e-12)


def test_tracer_dependencies():
    t = IndexTracer.inputs(3)
    e = vstack([t[[0]] * t[[1]], sin(t[[2]]), t[[0]] + 1.0])
    assert e.deps == [frozenset({0, 1}), frozenset({2}), frozenset({0})]
    assert (0, 1) in e.hess[0] and (2, 2) in e.hess[1] and not e.hess[2]


# ---------------------------------------------------------------------------
# coloring

@st.composite
def patterns(draw, symmetric=False):
    n = draw(st.integers(1, 14))
    m = n if symmetric else draw(st.integers(1, 14))
    mask = np.array(draw(st.lists(st.booleans(), min_size=n * m, max_size=n * m))).reshape(m, n)
    if symmetric:
        mask = mask | mask.T | np.eye(n, dtype=bool)
    r, c = np.nonzero(mask)
    return SparsityPattern(r, c, (m, n))


@settings(max_examples=60, deadline=None)
@given(patterns())
def test_jacobian_coloring_is_structurally_orthogonal(p):
    col = color_jacobian(p)
    mask = p.dense_mask()
    for k in range(col.num_colors):
        cols = col.column_color == k
        assert np.all(mask[:, cols].sum(axis=1) <= 1)
    assert verify_coloring(p, col, rng=0) < 1e-12


@settings(max_examples=60, deadline=None)
@given(patterns(symmetric=True))
def test_hessian_star_coloring_recovers(p):
    col = color_hessian(p)
    mask = p.dense_mask()
    off = mask & ~np.eye(p.shape[0], dtype=bool)
    # proper: adjacent vertices get different colors
    r, c = np.nonzero(off)
    assert np.all(col.column_color[r] != col.column_color[c])
    assert col.num_colors <= color_jacobian(p).num_colors
    assert verify_coloring(p, col, rng=1) < 1e-12


def test_hessian_coloring_rejects_unsymmetric():
    with pytest.raises(ValueError):
        color_hessian(SparsityPattern([0], [1], (2, 2)))


def test_arrow_pattern_uses_few_colors():
    n = 30
    r = list(range(n)) + [0] * (n - 1) + list(range(1, n))
    c = list(range(n)) + list(range(1, n)) + [0] * (n - 1)
    p = SparsityPattern(r, c, (n, n))
    assert color_hessian(p).num_colors == 2
    assert color_jacobian(p).num_colors == n


# ---------------------------------------------------------------------------
# derivatives against finite differences and the dense oracle

def _random_point(nlp, seed):
    rng = np.random.default_rng(seed)
    d = nlp.dims
    x = nlp.x_start + 0.1 * rng.standard_normal((d.N, d.n_x))
    u = nlp.u_start + 0.1 * rng.standard_normal(d.n_u)
    return x, u, rng.standard_normal((d.N, d.n_x)), rng.standard_normal((d.N, d.m))


@pytest.mark.parametrize("build", [lambda: toy_quadratic(2), lambda: toy_nonlinear(3),
                                   lambda: opf_model("case9", 2, 0.1).nlp])
def test_finite_difference_agreement(build):
    nlp = build()
    x, u, y, z = _random_point(nlp, 0)
    for block in range(nlp.dims.N):
        rep = finite_difference_check(nlp, x, u, y, z, block=block)
        assert rep.max_relative < 1e-6, rep.worst


def test_adjoint_sign_flip_is_detected():
    nlp = opf_model("case9", 1).nlp
    base = nlp.basis

    class Faulty:
        n_b = base.n_b

        def evaluate(self, d, data):
            return base.evaluate(d, data)

        def adjoint(self, d, wbar, data):
            out = base.adjoint(d, wbar, data)
            # corrupt the gradient with respect to the first variable
            return vstack([-out[[0]], out[1:]])

    bad = BlockNlp(**{**vars(nlp), "basis": Faulty()})
    x, u, y, z = _random_point(nlp, 1)
    rep = finite_difference_check(bad, x, u, y, z, labels=opf_model("case9", 1).vmap.labels())
    assert rep.grad_rel > 1e-3
    assert rep.worst["what"] in ("gradient", "hessian")
    assert finite_difference_check(nlp, x, u, y, z).max_relative < 1e-6


def test_evaluator_matches_dense_and_groups():
    nlp = opf_model("case9", 5, 0.1).nlp
    x, u, y, z = _random_point(nlp, 2)
    ev1 = BlockEvaluator(nlp)
    ev3 = BlockEvaluator(nlp, Executor(5, 3, workers=1), info=ev1.info)
    d1 = ev1.derivatives(x, u, y, z)
    d3 = ev3.derivatives(x, u, y, z)
    for name in ("f", "g", "h", "grad_L_x", "grad_L_u"):
        assert np.array_equal(getattr(d1, name), getattr(d3, name))
    f, g, h = evaluate_blocks(nlp, x, u)
    np.testing.assert_allclose(d1.g, g, atol=1e-14)
    np.testing.assert_allclose(d1.h, h, atol=1e-14)
    gx, gu = lagrangian_gradient(nlp, x, u, y, z)
    np.testing.assert_allclose(d1.grad_L_x, gx, atol=1e-12)
    # Hessians are symmetric per block
    for i in range(5):
        W = np.block([[d1.Wxx.dense(i), d1.Wxu.dense(i)], [d1.Wxu.dense(i).T, d1.Wuu.dense(i)]])
        assert np.array_equal(d1.Wxx.dense(i), d1.Wxx.dense(i).T)
        assert np.isfinite(W).all()


def test_buffer_accounting():
    nlp = opf_model("case9", 6).nlp
    info = analyze(nlp)
    ev = BlockEvaluator(nlp, Executor(6, 2, workers=1), info=info)
    per = [b.elements for b in ev.buffers]
    want = dual_buffer_elements(nlp.dims, 3, info.p_jac, info.p_hess)
    assert per == [want, want]
    assert DualBuffers.for_group(nlp.dims, 3, info.p_jac, info.p_hess).elements == want
    assert dual_buffer_elements(nlp.dims, 6, info.p_jac, info.p_hess) == 2 * want


def test_batch_eval_shapes_and_nonfinite():
    nlp = opf_model("case9", 4).nlp
    f, g, h = batch_eval(nlp, nlp.x_start[1:3].T, nlp.u_start, (1, 3))
    assert f.shape == (2,) and g.shape == (nlp.dims.n_x, 2) and h.shape == (nlp.dims.m, 2)
    with pytest.raises(ValueError):
        batch_eval(nlp, nlp.x_start.T, nlp.u_start, (1, 3))
    x = nlp.x_start.copy()
    x[2, 0] = np.nan
    with pytest.raises(NonFiniteError) as exc:
        batch_values(nlp, None, x, nlp.u_start, 0, 4)
    assert exc.value.block == 2
