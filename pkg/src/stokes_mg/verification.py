"""Cross-checks of the matrix-free pieces against dense references.

Each check returns a :class:`CheckResult`; :func:`run_all` runs the suite
used by ``stokes-mg verify``.  The sizes are small enough for dense linear
algebra, so the whole suite finishes in well under a minute.
"""
from dataclasses import dataclass
import functools
import itertools

import numpy as np

from .local_solver import (DirectPatchSolver, apply_Ainv, build_patch_matrices, fast_diag_prepare,
                           kronecker_patch_matrix, schur_solve)
from .multigrid import CoarseSolveError, CoarseSolver, TransferOperator, assemble_level_matrix
from .operator import make_context
from .oracle import dense_assemble, dense_patch_assemble
from .space import DoFLayout

__all__ = ["CheckResult", "check_operator", "check_patch_kronecker", "check_ainv",
           "check_local_solvers", "check_transfer_adjoint", "check_coarse_kernel", "run_all",
           "random_patch_data"]


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def _variants(dim):
    ends = [("interior", "interior"), ("nitsche", "interior"), ("interior", "nitsche")]
    return [v for v in itertools.product(ends, repeat=dim)]


def _sample_variants(dim):
    """Interior patch, a corner patch and two mixed ones (each needs a dense pseudo-inverse)."""
    ii, ni, in_ = ("interior", "interior"), ("nitsche", "interior"), ("interior", "nitsche")
    return [(ii,) * dim, (ni,) * dim, (ni, in_) + (ii,) * (dim - 2), (in_,) + (ii,) * (dim - 1)]


def check_operator(dim, degree, cells):
    """Largest entry of |A_matrix_free - A_oracle| relative to the largest entry of A."""
    dense = _dense_system(dim, degree, cells).matrix
    probed = assemble_level_matrix(make_context(DoFLayout(dim, cells, degree)))
    value = np.max(np.abs(probed - dense)) / np.max(np.abs(dense))
    return CheckResult(f"operator vs oracle dim={dim} k={degree} cells={cells}", float(value), 1e-12)


@functools.lru_cache(maxsize=4)
def _dense_system(dim, degree, cells):
    return dense_assemble(DoFLayout(dim, cells, degree))


def _patch_vertex(variant):
    """Vertex of a 4-cell mesh whose patch has the given end treatment."""
    return tuple(1 if a == "nitsche" else 3 if b == "nitsche" else 2 for a, b in variant)


def check_patch_kronecker(dim, degree):
    """Kronecker patch matrix against the oracle restricted to patch DoFs, all end variants.

    The patches are cut from the dense matrix of a mesh with 4 cells per direction.
    """
    matrices = build_patch_matrices(0.25, degree)
    system = _dense_system(dim, degree, 4)
    worst = 0.0
    for variant in _variants(dim):
        ref = dense_patch_assemble(system, _patch_vertex(variant))
        kron = kronecker_patch_matrix(matrices, dim, variant)
        worst = max(worst, np.max(np.abs(kron - ref)) / np.max(np.abs(ref)))
    return CheckResult(f"patch Kronecker factors dim={dim} k={degree}", float(worst), 1e-12)


def _velocity_block(matrices, dim, variant, c):
    full = kronecker_patch_matrix(matrices, dim, variant)
    sizes = [int(np.prod([2 * matrices.degree + (1 if i == j else 2) for i in range(dim)]))
             for j in range(dim)]
    start = sum(sizes[:c])
    return full[start:start + sizes[c], start:start + sizes[c]]


def check_ainv(dim, degree, h=0.25, seed=0):
    """Fast diagonalization against a dense solve with the patch velocity block."""
    rng = np.random.default_rng(seed)
    matrices = build_patch_matrices(h, degree)
    data = fast_diag_prepare(matrices, dim)
    worst = 0.0
    for variant in _variants(dim):
        for c in range(dim):
            A = _velocity_block(matrices, dim, variant, c)
            shape = data.velocity_shape(c)
            r = rng.standard_normal(shape)
            ref = np.linalg.solve(A, r.reshape(-1, order="F")).reshape(shape, order="F")
            got = apply_Ainv(data, r, c, variant)
            worst = max(worst, np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
    return CheckResult(f"fast diagonalization inverse dim={dim} k={degree}", float(worst), 1e-10)


def random_patch_data(rng, data, batch=()):
    """Random velocity residuals and a mean-zero pressure residual for a batch of patches."""
    F = [rng.standard_normal(data.velocity_shape(c) + tuple(batch)) for c in range(data.dim)]
    G = rng.standard_normal(data.pressure_shape + tuple(batch))
    axes = tuple(range(data.dim))
    G -= G.mean(axis=axes, keepdims=True)
    return F, G


def check_local_solvers(dim, degree, h=0.25, seed=0, cg_tol=1e-14, variants=None):
    """Schur-complement solve (tight CG) against the pseudo-inverse of the patch matrix.

    `variants` defaults to all end treatments in 2D and a sample in 3D.
    """
    rng = np.random.default_rng(seed)
    matrices = build_patch_matrices(h, degree)
    data = fast_diag_prepare(matrices, dim, cg_tol=cg_tol, cg_max_iter=500)
    direct = DirectPatchSolver(matrices, dim)
    axes = tuple(range(dim))
    if variants is None:
        variants = _variants(dim) if dim == 2 else _sample_variants(dim)
    worst = 0.0
    for variant in variants:
        F, G = random_patch_data(rng, data, (3,))
        U1, P1, _ = schur_solve(data, F, G, variant)
        U2, P2 = _direct(direct, F, G, variant)
        P1 = P1 - P1.mean(axis=axes, keepdims=True)
        P2 = P2 - P2.mean(axis=axes, keepdims=True)
        scale = max(max(np.max(np.abs(u)) for u in U2), np.max(np.abs(P2)))
        diff = max(max(np.max(np.abs(a - b)) for a, b in zip(U1, U2)), np.max(np.abs(P1 - P2)))
        worst = max(worst, diff / scale)
    return CheckResult(f"Schur vs direct local solver dim={dim} k={degree}", float(worst), 1e-8)


def _direct(direct, F, G, variant):
    from .local_solver import local_solve_direct
    return local_solve_direct(direct, F, G, variant)


def check_transfer_adjoint(dim, degree, cells=4, seed=0):
    """<restrict(y), x> = <y, prolongate(x)> for random vectors."""
    from .space import BlockVector
    rng = np.random.default_rng(seed)
    coarse, fine = DoFLayout(dim, cells, degree), DoFLayout(dim, 2 * cells, degree)
    transfer = TransferOperator(coarse, fine)
    x = BlockVector.zeros(coarse)
    y = BlockVector.zeros(fine)
    x.data[coarse.free_indices] = rng.standard_normal(coarse.n_free)
    y.data[fine.free_indices] = rng.standard_normal(fine.n_free)
    lhs = np.dot(transfer.restrict(y).data, x.data)
    rhs = np.dot(y.data, transfer.prolongate(x).data)
    return CheckResult(f"restriction is the transpose of prolongation dim={dim} k={degree}",
                       abs(lhs - rhs) / max(abs(lhs), 1e-300), 1e-12)


def check_coarse_kernel(dim, degree):
    """The coarse matrix has exactly one null mode (the constant pressure)."""
    try:
        CoarseSolver(make_context(DoFLayout(dim, 2, degree)))
        value = 0.0
    except CoarseSolveError:
        value = 1.0
    return CheckResult(f"coarse matrix has one null mode dim={dim} k={degree}", value, 0.5)


def run_all(seed=0, log=print):
    """Run the full cross-check suite; returns the list of results."""
    checks = [
        lambda: check_operator(2, 1, 4), lambda: check_operator(2, 2, 4),
        lambda: check_operator(3, 1, 2), lambda: check_operator(3, 1, 4),
    ]
    for dim, k in ((2, 1), (2, 2), (2, 3), (3, 1)):
        checks.append(lambda dim=dim, k=k: check_patch_kronecker(dim, k))
    for dim in (2, 3):
        for k in (1, 2, 3):
            checks.append(lambda dim=dim, k=k: check_ainv(dim, k, seed=seed))
            checks.append(lambda dim=dim, k=k: check_local_solvers(dim, k, seed=seed))
        checks.append(lambda dim=dim: check_transfer_adjoint(dim, 2, seed=seed))
        checks.append(lambda dim=dim: check_coarse_kernel(dim, 1))
    results = []
    for check in checks:
        result = check()
        results.append(result)
        if log:
            log(result.line())
    return results
