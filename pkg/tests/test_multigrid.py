import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_mg.multigrid import (CoarseSolveError, CoarseSolver, TransferOperator,
                                 assemble_level_matrix, build_multigrid)
from stokes_mg.operator import make_context
from stokes_mg.oracle import dense_assemble
from stokes_mg.smoother import residual
from stokes_mg.harness import divergence_norm, velocity_norm
from stokes_mg.space import BlockVector, DoFLayout, pressure_weights_1d
from stokes_mg.verification import check_transfer_adjoint


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 3), st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
def test_restriction_is_transpose_of_prolongation(dim, k, seed):
    assert check_transfer_adjoint(dim, k, cells=2, seed=seed).passed


def _pressure_integral(lay, p):
    w = pressure_weights_1d(lay)
    for _ in range(lay.dim):
        p = np.tensordot(w, p, axes=(0, 0))
    return float(p)


@pytest.mark.parametrize("dim,k", [(2, 1), (2, 3), (3, 2)])
def test_prolongation_is_the_exact_injection(dim, k):
    coarse, fine = DoFLayout(dim, 2, k), DoFLayout(dim, 4, k)
    T = TransferOperator(coarse, fine)
    x = BlockVector.zeros(coarse)
    x.data[coarse.free_indices] = np.random.default_rng(0).standard_normal(coarse.n_free)
    xf = T.prolongate(x)
    # the same function on the finer mesh has the same norms and integrals
    assert velocity_norm(fine, xf) == pytest.approx(velocity_norm(coarse, x), rel=1e-12)
    assert divergence_norm(fine, xf) == pytest.approx(divergence_norm(coarse, x), rel=1e-12)
    assert _pressure_integral(fine, xf.p) == pytest.approx(_pressure_integral(coarse, x.p), rel=1e-12)
    for c in range(dim):
        assert np.all(np.take(xf.block(c), [0, -1], axis=c) == 0)


def test_transfer_rejects_non_nested_levels():
    with pytest.raises(ValueError):
        TransferOperator(DoFLayout(2, 2, 1), DoFLayout(2, 8, 1))
    with pytest.raises(ValueError):
        TransferOperator(DoFLayout(2, 2, 1), DoFLayout(2, 4, 2))


@pytest.mark.parametrize("dim,k", [(2, 1), (2, 2), (3, 1)])
def test_coarse_matrix_has_single_constant_null_mode(dim, k):
    lay = DoFLayout(dim, 2, k)
    ctx = make_context(lay)
    A = assemble_level_matrix(ctx)
    np.testing.assert_allclose(A, dense_assemble(lay).matrix, atol=1e-12 * np.abs(A).max())
    s = np.linalg.svd(A, compute_uv=False)
    assert np.sum(s < 1e-10 * s[0]) == 1
    solver = CoarseSolver(ctx)
    b = BlockVector.zeros(lay)
    b.data[lay.free_indices] = np.random.default_rng(1).standard_normal(lay.n_free)
    b.p[...] -= b.p.mean()
    x = solver.solve(b)
    assert np.linalg.norm(residual(ctx, x, b).data) < 1e-10 * np.linalg.norm(b.data)


def test_coarse_solver_detects_extra_null_modes():
    ctx = make_context(DoFLayout(2, 2, 1))
    with pytest.raises(CoarseSolveError):
        CoarseSolver(ctx, threshold=0.5)


@pytest.mark.parametrize("dim,k,level", [(2, 1, 2), (2, 2, 3), (3, 1, 2)])
def test_v_cycle_contracts(dim, k, level):
    mg = build_multigrid(dim, k, level)
    lay = mg.fine_layout
    ctx = mg.contexts[-1]
    rng = np.random.default_rng(3)
    b = BlockVector.zeros(lay)
    b.data[lay.free_indices] = rng.standard_normal(lay.n_free)
    b.p[...] -= b.p.mean()
    x = BlockVector.zeros(lay)
    norms = [np.linalg.norm(b.data)]
    for _ in range(4):
        r = residual(ctx, x, b)
        x.data += mg.v_cycle(r).data
        norms.append(np.linalg.norm(residual(ctx, x, b).data))
    rate = (norms[-1] / norms[0]) ** 0.25
    assert rate < 0.7
    assert mg.stats.cycles == 4


def test_single_precision_hierarchy():
    mg = build_multigrid(2, 2, 2)
    mg32 = mg.astype(np.float32)
    assert mg32.dtype == np.float32
    assert all(c.dtype == np.float32 for c in mg32.contexts)
    lay = mg.fine_layout
    b = BlockVector.zeros(lay)
    b.data[lay.free_indices] = np.random.default_rng(0).standard_normal(lay.n_free)
    y64 = mg.v_cycle(b)
    y32 = mg32.v_cycle(b.astype(np.float32))
    assert y32.dtype == np.float32
    assert np.abs(y32.data - y64.data).max() < 1e-3 * np.abs(y64.data).max()


def test_direct_and_schur_cycles_agree():
    a = build_multigrid(2, 2, 2, "schur", cg_tol=1e-14, cg_max_iter=500)
    b_ = build_multigrid(2, 2, 2, "direct")
    lay = a.fine_layout
    b = BlockVector.zeros(lay)
    b.data[lay.free_indices] = np.random.default_rng(9).standard_normal(lay.n_free)
    ya, yb = a.v_cycle(b), b_.v_cycle(b)
    assert np.abs(ya.data - yb.data).max() < 1e-8 * np.abs(yb.data).max()
