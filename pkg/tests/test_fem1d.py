import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_mg.fem1d import (derivative_matrix_1d, embedding_1d, gauss_lobatto_points,
                             gauss_quadrature, lagrange_basis, mass_matrix_1d, penalty_parameter,
                             prolongation_1d, sipg_laplace_1d, stiffness_matrix_1d, tensor_set,
                             velocity_bases)


def test_gauss_rules():
    q = gauss_quadrature(1)
    assert q.points[0] == pytest.approx(0.5) and q.weights[0] == pytest.approx(1.0)
    q = gauss_quadrature(2)
    np.testing.assert_allclose(q.points, [0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    q = gauss_quadrature(3)
    assert np.dot(q.weights, q.points ** 5) == pytest.approx(1 / 6, abs=1e-15)
    with pytest.raises(ValueError):
        gauss_quadrature(0)


@given(st.integers(1, 8))
def test_gauss_exactness(n):
    q = gauss_quadrature(n)
    assert q.weights.sum() == pytest.approx(1.0)
    for p in range(2 * n):
        assert np.dot(q.weights, q.points ** p) == pytest.approx(1 / (p + 1), rel=1e-12)


def test_lobatto_points_include_ends():
    pts = gauss_lobatto_points(4)
    assert pts[0] == 0.0 and pts[-1] == 1.0
    np.testing.assert_allclose(pts, 1 - pts[::-1], atol=1e-15)


@given(st.integers(0, 6), st.floats(0, 1))
def test_basis_cardinal_and_partition_of_unity(degree, x):
    b = lagrange_basis(degree)
    np.testing.assert_allclose(b.values(b.nodes), np.eye(b.size), atol=1e-12)
    assert b.values([x]).sum() == pytest.approx(1.0)
    assert b.derivatives([x]).sum() == pytest.approx(0.0, abs=1e-9)


def test_mass_examples():
    np.testing.assert_allclose(mass_matrix_1d(lagrange_basis(0), lagrange_basis(0), 1.0), [[1.0]])
    np.testing.assert_allclose(mass_matrix_1d(lagrange_basis(1), lagrange_basis(1), 1.0),
                               [[1 / 3, 1 / 6], [1 / 6, 1 / 3]])


@pytest.mark.parametrize("k", [1, 2, 3])
def test_mixed_mass_row_sums(k):
    par, orth = velocity_bases(k)
    h = 0.3
    mixed = mass_matrix_1d(par, orth, h)   # rows: pressure test, columns: velocity ansatz
    col_mass = mass_matrix_1d(par, lagrange_basis(0), h)[0]
    np.testing.assert_allclose(mixed.sum(axis=0), col_mass, rtol=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_derivative_matrix(k):
    par, orth = velocity_bases(k)
    D = derivative_matrix_1d(orth, par)
    assert D.shape == (orth.size, par.size)
    np.testing.assert_allclose(D @ np.ones(par.size), 0, atol=1e-13)
    # derivative of x is 1: D x = M_orth 1 on the reference interval
    np.testing.assert_allclose(D @ par.nodes, mass_matrix_1d(orth, orth, 1.0) @ np.ones(orth.size),
                               atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("bc", ["weak-nitsche", "none", "strong-zero", ("interior", "nitsche")])
def test_sipg_symmetric(k, bc):
    L = sipg_laplace_1d(k, 2, 0.25, penalty_parameter(k, 0.25), bc)
    np.testing.assert_allclose(L, L.T, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_sipg_kernel_and_coercivity(k):
    h = 0.5
    L = sipg_laplace_1d(k, 2, h, penalty_parameter(k, h), "none")
    np.testing.assert_allclose(L @ np.ones(L.shape[0]), 0, atol=1e-11)
    assert np.linalg.eigvalsh(L).min() > -1e-10
    L = sipg_laplace_1d(k, 2, h, penalty_parameter(k, h), "weak-nitsche")
    assert np.linalg.eigvalsh(L).min() > 0
    with pytest.raises(ValueError):
        sipg_laplace_1d(k, 2, h, 0.0)


def test_sipg_reproduces_quadratic_form():
    # u = x on [0, 1] split in two cells, no boundary terms: a(u, u) = int u'^2 = 1
    k, h = 1, 0.5
    L = sipg_laplace_1d(k, 2, h, penalty_parameter(k, h), "none")
    nodes = np.concatenate([e * h + h * lagrange_basis(k).nodes for e in range(2)])
    assert nodes @ L @ nodes == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("degree", [1, 2, 3])
@pytest.mark.parametrize("continuity", ["continuous", "discontinuous"])
def test_embedding(degree, continuity):
    E = embedding_1d(degree, continuity)
    basis = lagrange_basis(degree)
    np.testing.assert_allclose(E @ np.ones(basis.size), 1.0, atol=1e-13)
    assert np.linalg.matrix_rank(E) == basis.size
    # a polynomial keeps its values after subdivision
    coeffs = basis.nodes ** degree
    children = np.concatenate((0.5 * basis.nodes, 0.5 + 0.5 * basis.nodes))
    if continuity == "continuous":
        children = np.delete(children, basis.size)
    np.testing.assert_allclose(E @ coeffs, children ** degree, atol=1e-13)


def test_prolongation_shapes():
    P = prolongation_1d(2, 4, "continuous")
    assert P.shape == (2 * 4 * 2 + 1, 4 * 2 + 1)
    P = prolongation_1d(1, 4, "discontinuous")
    assert P.shape == (16, 8)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_tensor_set_dimensions(k):
    t = tensor_set(k, 0.125, 2)
    assert t.n_orth - t.n_par == 1
    assert t.deriv.shape == (t.n_orth, t.n_par)
    for M in (t.mass_par, t.mass_orth):
        np.testing.assert_allclose(M, M.T, atol=1e-15)
        assert np.linalg.eigvalsh(M).min() > 0
    for L in list(t.lap_orth.values()) + [t.lap_par]:
        assert np.linalg.eigvalsh(L).min() > -1e-10
    assert stiffness_matrix_1d(lagrange_basis(k), 1.0).shape == (k + 1, k + 1)
