import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from blockipm.linalg import (
    OpCounter,
    SingularBlockError,
    ZeroPivotError,
    factor_block_diag,
    factor_dense_sym,
    factor_sparse_sym,
    inertia_by_eigenvalues,
    spgemm_condense,
)


def _blocks(rng, M, n, density=0.3):
    out = []
    for _ in range(M):
        A = sp.random(n, n, density, random_state=int(rng.integers(2**31))).toarray()
        out.append(sp.csr_matrix(A + (1.0 + n * density) * np.eye(n)))
    return out


@pytest.mark.parametrize("dense_max", [0, 512])
def test_block_lu_solves_and_reconstructs(dense_max):
    rng = np.random.default_rng(0)
    blocks = _blocks(rng, 4, 12)
    f = factor_block_diag(blocks, dense_max=dense_max)
    assert f.reconstruction_error(blocks) < 1e-12
    G = sp.block_diag(blocks).toarray()
    B = rng.standard_normal((48, 3))
    np.testing.assert_allclose(G @ f.solve(B), B, atol=1e-10)
    np.testing.assert_allclose(G.T @ f.solve(B, transpose=True), B, atol=1e-10)
    b = rng.standard_normal(48)
    np.testing.assert_allclose(G @ f.solve(b), b, atol=1e-10)


def test_op_counter_counts_passes():
    rng = np.random.default_rng(1)
    f = factor_block_diag(_blocks(rng, 3, 5))
    c = OpCounter()
    f.solve(rng.standard_normal((15, 2)), counter=c)
    assert (c.spsm, c.spmm) == (2, 2)
    c.reset()
    assert (c.spsm, c.spmm) == (0, 0)


def test_singular_block_reports_index():
    rng = np.random.default_rng(2)
    blocks = _blocks(rng, 3, 4)
    S = blocks[1].toarray()
    S[2] = S[0]
    blocks[1] = sp.csr_matrix(S)
    with pytest.raises(SingularBlockError) as exc:
        factor_block_diag(blocks, offset=10)
    assert exc.value.block == 11
    blocks[1] = sp.csr_matrix((4, 4))
    with pytest.raises(SingularBlockError):
        factor_block_diag(blocks)


def test_condense_matches_dense():
    rng = np.random.default_rng(3)
    W = sp.random(6, 6, 0.4, random_state=1)
    W = W + W.T
    H = sp.random(4, 6, 0.5, random_state=2)
    s = rng.uniform(0.5, 2, 4)
    K = spgemm_condense(W, H, s).toarray()
    np.testing.assert_allclose(K, W.toarray() + H.toarray().T @ np.diag(s) @ H.toarray(), atol=1e-14)
    with pytest.raises(ValueError):
        spgemm_condense(W, H, s[:3])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 9), st.integers(0, 10_000))
def test_dense_inertia_matches_eigenvalues(n_pos, n_neg, seed):
    rng = np.random.default_rng(seed)
    n = n_pos + n_neg
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.concatenate([rng.uniform(0.1, 10, n_pos), -rng.uniform(0.1, 10, n_neg)])
    A = Q @ np.diag(ev) @ Q.T
    A = 0.5 * (A + A.T)
    fac = factor_dense_sym(A)
    assert fac.inertia == (n_pos, n_neg, 0) == inertia_by_eigenvalues(A)
    b = rng.standard_normal(n)
    np.testing.assert_allclose(A @ fac.solve(b), b, atol=1e-8 * np.abs(b).max() * 100)


def test_dense_zero_pivot_and_symmetry():
    A = np.diag([1.0, -1.0, 0.0])
    with pytest.raises(ZeroPivotError) as exc:
        factor_dense_sym(A)
    assert exc.value.inertia == (1, 1, 1)
    assert factor_dense_sym(A, allow_singular=True).inertia == (1, 1, 1)
    with pytest.raises(ValueError):
        factor_dense_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sparse_bordered_inertia_and_solve():
    # arrowhead: two independent interior blocks, a 2-variable border
    rng = np.random.default_rng(5)
    blocks = []
    for _ in range(2):
        B = rng.standard_normal((4, 4))
        blocks.append(B + B.T)
    A = np.zeros((10, 10))
    A[:4, :4], A[4:8, 4:8] = blocks
    C = rng.standard_normal((2, 8))
    A[8:, :8], A[:8, 8:] = C, C.T
    A[8:, 8:] = np.diag([5.0, -3.0])
    fac = factor_sparse_sym(sp.csr_matrix(A), border=[8, 9])
    assert fac.inertia == inertia_by_eigenvalues(A)
    b = rng.standard_normal(10)
    np.testing.assert_allclose(A @ fac.solve(b), b, atol=1e-8)


def test_sparse_singular_component_falls_back():
    # the interior block is singular but the whole matrix is not
    A = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    fac = factor_sparse_sym(sp.csr_matrix(A), border=[2])
    assert fac.inertia == inertia_by_eigenvalues(A) == (2, 1, 0)
    np.testing.assert_allclose(A @ fac.solve(np.ones(3)), np.ones(3), atol=1e-12)
