import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_mg.local_solver import (CGNonConvergence, DirectPatchSolver, apply_Ainv, apply_schur,
                                    build_patch_matrices, fast_diag_prepare, kronecker_patch_matrix,
                                    local_solve_direct, patch_variant, schur_solve)
from stokes_mg.verification import (_sample_variants, _variants, _velocity_block,
                                    check_local_solvers, random_patch_data)

INTERIOR = ("interior", "interior")


@pytest.mark.parametrize("k", [1, 2, 4])
def test_eigenvectors_mass_orthonormal(k):
    mats = build_patch_matrices(0.125, k)
    data = fast_diag_prepare(mats, 2)
    lam, S = data.par
    np.testing.assert_allclose(S.T @ mats.mass_par @ S, np.eye(len(lam)), atol=1e-11)
    np.testing.assert_allclose(S.T @ mats.lap_par @ S, np.diag(lam), atol=1e-8 * lam.max())
    for v, (lam_o, S_o) in data.orth.items():
        np.testing.assert_allclose(S_o.T @ mats.mass_orth @ S_o, np.eye(len(lam_o)), atol=1e-11)
        assert lam_o.min() > 0, v


def test_patch_variant_marks_boundary_ends():
    assert patch_variant((1, 2), 4) == (("nitsche", "interior"), INTERIOR)
    assert patch_variant((3, 1), 4) == (("interior", "nitsche"), ("nitsche", "interior"))
    assert patch_variant((1,), 2) == (("nitsche", "nitsche"),)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 3), st.integers(1, 3), st.integers(0, 2 ** 31 - 1), st.data())
def test_ainv_round_trip(dim, k, seed, draw):
    mats = build_patch_matrices(0.25, k)
    data = fast_diag_prepare(mats, dim)
    variant = draw.draw(st.sampled_from(_variants(dim)))
    c = draw.draw(st.integers(0, dim - 1))
    A = _velocity_block(mats, dim, variant, c)
    shape = data.velocity_shape(c)
    u = np.random.default_rng(seed).standard_normal(shape)
    r = (A @ u.reshape(-1, order="F")).reshape(shape, order="F")
    np.testing.assert_allclose(apply_Ainv(data, r, c, variant), u, atol=1e-9 * np.abs(u).max())


def test_schur_matches_dense_complement():
    dim, k = 2, 2
    mats = build_patch_matrices(0.25, k)
    data = fast_diag_prepare(mats, dim)
    variant = (("nitsche", "interior"), INTERIOR)
    full = kronecker_patch_matrix(mats, dim, variant)
    nv = sum(int(np.prod(data.velocity_shape(c))) for c in range(dim))
    A, B = full[:nv, :nv], full[nv:, :nv]
    S = B @ np.linalg.solve(A, B.T)
    p = np.random.default_rng(1).standard_normal(data.pressure_shape)
    got = apply_schur(data, p, variant)
    ref = (S @ p.reshape(-1, order="F")).reshape(data.pressure_shape, order="F")
    np.testing.assert_allclose(got, ref, atol=1e-10 * np.abs(ref).max())


@pytest.mark.parametrize("dim,k", [(2, 1), (2, 3), (3, 1), (3, 2)])
def test_schur_solver_matches_direct(dim, k):
    result = check_local_solvers(dim, k, seed=7)
    assert result.passed, result.line()


def test_batched_solve_equals_individual_solves():
    mats = build_patch_matrices(0.25, 2)
    data = fast_diag_prepare(mats, 2)
    rng = np.random.default_rng(2)
    F, G = random_patch_data(rng, data, (2, 3))
    variant = (INTERIOR, INTERIOR)
    U, P, info = schur_solve(data, F, G, variant)
    assert info.patches == 6
    for i in range(2):
        for j in range(3):
            u1, p1, _ = schur_solve(data, [f[..., i, j] for f in F], G[..., i, j], variant)
            np.testing.assert_allclose(p1, P[..., i, j], atol=1e-10)
            for a, b in zip(u1, U):
                np.testing.assert_allclose(a, b[..., i, j], atol=1e-10)


def test_zero_residual_gives_zero_correction():
    mats = build_patch_matrices(0.5, 1)
    data = fast_diag_prepare(mats, 3)
    F = [np.zeros(data.velocity_shape(c) + (2,)) for c in range(3)]
    G = np.zeros(data.pressure_shape + (2,))
    U, P, info = schur_solve(data, F, G, _sample_variants(3)[1])
    assert info.iterations == 0
    assert all(np.all(u == 0) for u in U) and np.all(P == 0)


def test_pressure_solution_is_mean_zero_and_solves_system():
    dim, k = 2, 3
    mats = build_patch_matrices(0.25, k)
    data = fast_diag_prepare(mats, dim, cg_tol=1e-14, cg_max_iter=500)
    variant = (("interior", "nitsche"), ("nitsche", "interior"))
    F, G = random_patch_data(np.random.default_rng(4), data, ())
    U, P, _ = schur_solve(data, F, G, variant)
    assert abs(P.mean()) < 1e-12
    full = kronecker_patch_matrix(mats, dim, variant)
    x = np.concatenate([u.reshape(-1, order="F") for u in U] + [P.reshape(-1, order="F")])
    b = np.concatenate([f.reshape(-1, order="F") for f in F] + [G.reshape(-1, order="F")])
    assert np.linalg.norm(full @ x - b) < 1e-8 * np.linalg.norm(b)


def test_strict_mode_raises_on_cg_limit():
    mats = build_patch_matrices(0.25, 3)
    data = fast_diag_prepare(mats, 2, cg_tol=1e-14, cg_max_iter=2)
    F, G = random_patch_data(np.random.default_rng(0), data, (4,))
    _, _, info = schur_solve(data, F, G, (INTERIOR, INTERIOR))
    assert not info.converged and info.iterations == 2
    with pytest.raises(CGNonConvergence):
        schur_solve(data, F, G, (INTERIOR, INTERIOR), strict=True)


def test_mass_preconditioner_reduces_iterations():
    mats = build_patch_matrices(0.25, 4)
    F, G = random_patch_data(np.random.default_rng(0), fast_diag_prepare(mats, 2), (3,))
    its = {}
    for prec in ("mass", "none"):
        data = fast_diag_prepare(mats, 2, cg_max_iter=500, cg_preconditioner=prec)
        its[prec] = schur_solve(data, F, G, (INTERIOR, INTERIOR))[2].iterations
    assert its["mass"] < its["none"]


def test_single_precision_uses_relaxed_cg_floor():
    mats = build_patch_matrices(0.25, 2)
    data64 = fast_diag_prepare(mats, 2)
    data32 = data64.astype(np.float32)
    assert data32.effective_cg_tol == pytest.approx(1e-6)
    F, G = random_patch_data(np.random.default_rng(5), data64, (3,))
    U64, P64, _ = schur_solve(data64, F, G, (INTERIOR, INTERIOR))
    U32, P32, info = schur_solve(data32, [f.astype(np.float32) for f in F], G.astype(np.float32),
                                 (INTERIOR, INTERIOR))
    assert P32.dtype == np.float32 and info.converged
    assert np.abs(P32 - P64).max() < 1e-4 * np.abs(P64).max()


def test_direct_solver_rejects_singular_velocity():
    mats = build_patch_matrices(0.25, 1)
    bad = DirectPatchSolver(mats, 2, assemble=lambda v: np.zeros((5, 5)))
    with pytest.raises(ValueError):
        bad.pinv((INTERIOR, INTERIOR))


def test_direct_solver_astype_keeps_cache():
    mats = build_patch_matrices(0.25, 1)
    solver = DirectPatchSolver(mats, 2)
    data = fast_diag_prepare(mats, 2)
    F, G = random_patch_data(np.random.default_rng(0), data, (2,))
    U, P = local_solve_direct(solver, F, G, (INTERIOR, INTERIOR))
    solver32 = solver.astype(np.float32)
    U32, P32 = local_solve_direct(solver32, [f.astype(np.float32) for f in F], G.astype(np.float32),
                                  (INTERIOR, INTERIOR))
    assert P32.dtype == np.float32
    np.testing.assert_allclose(P32, P, atol=1e-4 * np.abs(P).max())
