import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dense_cheb_matrices, random_weighted_graph

from chebseg.core import SparseAdjacency
from chebseg.graph import normalized_laplacian, rescale_laplacian
from chebseg.spectral import (MONOMIAL, PolynomialFilter, SpectralDecomposition, chebyshev_apply,
                              chebyshev_combine, chebyshev_terms, monomial_apply,
                              spectral_convolve, spectral_filter_oracle)


def rescaled(m):
    return rescale_laplacian(normalized_laplacian(SparseAdjacency.from_dense(m)))


def inf_rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def test_filter_validation():
    with pytest.raises(ValueError):
        PolynomialFilter(())
    with pytest.raises(ValueError):
        PolynomialFilter((1.0, np.inf))
    assert PolynomialFilter((1, 2, 3)).order == 2


def test_order_zero_is_identity(rng):
    lt = rescaled(random_weighted_graph(rng, 8))
    x = rng.normal(size=(8, 3))
    assert np.array_equal(chebyshev_apply(lt, PolynomialFilter([1.0]), x), x)


def test_order_one_is_operator(rng):
    lt = rescaled(random_weighted_graph(rng, 8))
    x = rng.normal(size=(8, 3))
    np.testing.assert_array_equal(chebyshev_apply(lt, PolynomialFilter([0.0, 1.0]), x), lt.matrix @ x)


def test_chebyshev_matches_dense_recurrence(rng):
    m = random_weighted_graph(rng, 8)
    lt = rescaled(m)
    theta = rng.normal(size=4)
    x = rng.normal(size=(8, 2))
    mats = dense_cheb_matrices(lt.to_dense(), 3)
    want = sum(t * mat @ x for t, mat in zip(theta, mats))
    assert inf_rel(chebyshev_apply(lt, PolynomialFilter(theta), x), want) < 1e-10


def test_chebyshev_rejects_wrong_kind_and_shape(rng):
    m = random_weighted_graph(rng, 5)
    lap = normalized_laplacian(SparseAdjacency.from_dense(m))
    with pytest.raises(ValueError):
        chebyshev_apply(lap, PolynomialFilter([1.0, 1.0]), np.ones(5))
    with pytest.raises(ValueError):
        chebyshev_apply(rescaled(m), PolynomialFilter([1.0]), np.ones(6))
    with pytest.raises(ValueError):
        chebyshev_apply(rescaled(m), PolynomialFilter([1.0], MONOMIAL), np.ones(5))


def test_monomial_examples(rng):
    x = rng.normal(size=(4, 2))
    eye_lap = normalized_laplacian(SparseAdjacency(4, [], [], []))
    assert np.array_equal(monomial_apply(eye_lap, PolynomialFilter([1.0], MONOMIAL), x), x)
    assert np.array_equal(monomial_apply(eye_lap, PolynomialFilter([0.0, 1.0], MONOMIAL), x), x)

    lap = normalized_laplacian(SparseAdjacency.from_dense(random_weighted_graph(rng, 8)))
    a = rng.normal(size=3)
    x = rng.normal(size=(8, 3))
    dense = lap.to_dense()
    want = (a[0] * np.eye(8) + a[1] * dense + a[2] * dense @ dense) @ x
    assert inf_rel(monomial_apply(lap, PolynomialFilter(a, MONOMIAL), x), want) < 1e-10


def test_decomposition_invariants(rng):
    lap = normalized_laplacian(SparseAdjacency.from_dense(random_weighted_graph(rng, 20)))
    d = SpectralDecomposition.of(lap)
    u = d.eigenvectors
    assert np.all(np.diff(d.eigenvalues) >= 0)
    np.testing.assert_allclose(u.T @ u, np.eye(20), rtol=0, atol=1e-9)
    np.testing.assert_allclose(d.reconstruct(), lap.to_dense(), rtol=0, atol=1e-8)


def test_decomposition_limits():
    with pytest.raises(ValueError):
        SpectralDecomposition.of(np.eye(65))
    with pytest.raises(ValueError):
        SpectralDecomposition.of(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_convolve_identity_basis(rng):
    d = SpectralDecomposition(np.ones(5), np.eye(5))
    x = rng.normal(size=(5, 3))
    assert np.array_equal(spectral_convolve(d, x, np.ones(5)), x)
    assert np.array_equal(spectral_convolve(d, x, np.zeros(5)), np.zeros((5, 3)))


def test_convolve_path_graph(rng):
    m = np.zeros((4, 4))
    for i in range(3):
        m[i, i + 1] = m[i + 1, i] = 1.0
    d = SpectralDecomposition.of(normalized_laplacian(SparseAdjacency.from_dense(m)))
    x, k = rng.normal(size=4), rng.normal(size=4)
    # sum over eigenpairs u_i (u_i . x)(u_i . k)
    u = d.eigenvectors
    want = sum(u[:, i] * (u[:, i] @ x) * (u[:, i] @ k) for i in range(4))
    np.testing.assert_allclose(spectral_convolve(d, x, k), want, rtol=0, atol=1e-12)


def test_convolve_shape_mismatch():
    d = SpectralDecomposition(np.ones(3), np.eye(3))
    with pytest.raises(ValueError):
        spectral_convolve(d, np.ones(3), np.ones(4))


def test_oracle_constant_filter(rng):
    d = SpectralDecomposition.of(rescaled(random_weighted_graph(rng, 6)))
    x = rng.normal(size=(6, 2))
    np.testing.assert_allclose(spectral_filter_oracle(d, PolynomialFilter([2.5]), x), 2.5 * x, atol=1e-12)


def test_oracle_first_order_is_product(rng):
    lt = rescaled(random_weighted_graph(rng, 10))
    d = SpectralDecomposition.of(lt)
    x = rng.normal(size=(10, 2))
    np.testing.assert_allclose(spectral_filter_oracle(d, PolynomialFilter([0, 1]), x), lt.matrix @ x,
                               rtol=0, atol=1e-9)


def test_oracle_agrees_with_recurrence(rng):
    lt = rescaled(random_weighted_graph(rng, 10))
    filt = PolynomialFilter(rng.normal(size=4))
    x = rng.normal(size=(10, 3))
    got = chebyshev_apply(lt, filt, x)
    assert inf_rel(got, spectral_filter_oracle(SpectralDecomposition.of(lt), filt, x)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_recurrence_is_linear(n, order, seed):
    rng = np.random.default_rng(seed)
    lt = rescaled(random_weighted_graph(rng, n))
    filt = PolynomialFilter(rng.normal(size=order + 1))
    x, y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    c = rng.normal()
    fx, fy = chebyshev_apply(lt, filt, x), chebyshev_apply(lt, filt, y)
    np.testing.assert_allclose(chebyshev_apply(lt, filt, x + y), fx + fy, rtol=0, atol=1e-10)
    np.testing.assert_allclose(chebyshev_apply(lt, filt, c * x), c * fx, rtol=0, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_recurrence_permutation_equivariant(n, order, seed):
    rng = np.random.default_rng(seed)
    m = random_weighted_graph(rng, n)
    perm = rng.permutation(n)
    filt = PolynomialFilter(rng.normal(size=order + 1))
    x = rng.normal(size=(n, 3))
    a = chebyshev_apply(rescaled(m), filt, x)
    b = chebyshev_apply(rescaled(m[np.ix_(perm, perm)]), filt, x[perm])
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)


@pytest.mark.parametrize("coeffs", [[0.3], [1.0, -2.0], [0.5, 0.25, -1.5, 2.0]])
def test_single_node_scalar(coeffs):
    lt = rescale_laplacian(normalized_laplacian(SparseAdjacency(1, [], [], [])))
    lam = lt.to_dense()[0, 0]
    filt = PolynomialFilter(coeffs)
    x = np.array([[1.7]])
    assert chebyshev_apply(lt, filt, x)[0, 0] == pytest.approx(filt.evaluate(lam) * 1.7, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_clenshaw_matches_recurrence(n, order, seed):
    rng = np.random.default_rng(seed)
    op = sp.csr_matrix(rescaled(random_weighted_graph(rng, n)).matrix) if n > 1 else sp.csr_matrix([[-1.0]])
    ys = [rng.normal(size=(n, 2)) for _ in range(order + 1)]
    want = sum(dense_cheb_matrices(op.toarray(), order)[i] @ ys[i] for i in range(order + 1))
    got = chebyshev_combine(lambda v: op @ v, ys)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)
    terms = list(chebyshev_terms(lambda v: op @ v, ys[0], order))
    for t, mat in zip(terms, dense_cheb_matrices(op.toarray(), order)):
        np.testing.assert_allclose(t, mat @ ys[0], rtol=0, atol=1e-10)
