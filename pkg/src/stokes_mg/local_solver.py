"""Solvers for the saddle-point problem on one vertex patch.

A vertex patch is the 2**d cells around an interior vertex.  Restricted to
the functions supported on the patch the Stokes matrix keeps its tensor
structure: for velocity component c

    A_c = sum_i  L_i (x) M_j (x) ...      (L_i in direction i, masses elsewhere)
    B_c = - D (x) M' (x) ...              (D in direction c, M' elsewhere)

so A_c is inverted by fast diagonalization with the generalized eigenpairs
``L S = M S Lambda`` of each direction, and the pressure is obtained from the
Schur complement ``S = B A^-1 B^T`` with a conjugate gradient iteration in
the mean-zero pressure subspace.  ``DirectPatchSolver`` pseudo-inverts the
assembled patch matrix instead.

Every function works on batches: a patch tensor has the local node axes
first and any number of trailing batch axes, ``(a_1, ..., a_d, *batch)``.

Along a direction orthogonal to a component the patch can touch the domain
boundary at either end, which turns the half interior-face terms at that end
into full Nitsche terms.  The 1D eigenpairs are therefore stored for each of
the end treatments ``(left, right)`` in ``{"interior", "nitsche"}**2``.
"""
from dataclasses import dataclass, field
import itertools
import math

import numpy as np
import scipy.linalg

from .fem1d import tensor_set
from .operator import sum_factor_contract

__all__ = ["PatchSolverData", "DirectPatchSolver", "LocalSolveInfo", "CGNonConvergence",
           "build_patch_matrices", "fast_diag_prepare", "patch_variant", "apply_Ainv",
           "apply_schur", "schur_solve", "local_solve_direct", "kronecker_patch_matrix"]

END_KINDS = ("nitsche", "interior")
FLOAT32_CG_FLOOR = 1e-6


class CGNonConvergence(RuntimeError):
    """Inner CG stopped at max_iter above the requested tolerance."""


def build_patch_matrices(h, k):
    """Univariate matrices on the two-cell patch interval with cells of width h."""
    if k < 1:
        raise ValueError("degree must be at least 1")
    return tensor_set(k, h, 2)


def patch_variant(vertex, cells):
    """End treatment per direction for the patch around `vertex` on a mesh of `cells` cells."""
    return tuple(("nitsche" if v == 1 else "interior", "nitsche" if v == cells - 1 else "interior")
                 for v in vertex)


def _generalized_eig(L, M):
    try:
        scipy.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError("patch mass matrix is not symmetric positive definite") from None
    lam, S = scipy.linalg.eigh(L, M)
    return lam, S


@dataclass(eq=False)
class _Factors:
    """Contraction matrices and the inverse eigenvalue sums of one component and end variant."""

    S: list
    St: list
    F: list
    Ft: list
    inv_lam: np.ndarray

    @classmethod
    def build(cls, dirs):
        contiguous = np.ascontiguousarray
        lam = _eig_sum([l for l, _, _ in dirs], 0)
        return cls([contiguous(s) for _, s, _ in dirs], [contiguous(s.T) for _, s, _ in dirs],
                   [contiguous(f) for _, _, f in dirs], [contiguous(f.T) for _, _, f in dirs],
                   (1.0 / lam).astype(dirs[0][1].dtype))

    def scale(self, values):
        """Multiply by the inverse eigenvalue sums; `values` may carry trailing batch axes."""
        inv = self.inv_lam
        return values * inv.reshape(inv.shape + (1,) * (values.ndim - inv.ndim))


@dataclass(eq=False)
class PatchSolverData:
    """Eigenpairs and coupling factors shared by all patches of one level.

    ``par`` holds ``(S, lam)`` for a velocity component along its own
    direction, ``orth[(left, right)]`` the pairs along the other directions.
    ``coupling_par = D S_par`` and ``coupling_orth[v] = M' S_orth[v]`` are the
    low-rank factors of ``B A^-1 B^T``; ``mass_inv`` is the 1D inverse
    pressure mass used to precondition the Schur CG.
    """

    dim: int
    degree: int
    h: float
    matrices: object = field(repr=False)
    par: tuple = field(repr=False)
    orth: dict = field(repr=False)
    cg_tol: float = 1e-12
    cg_max_iter: int = 100
    dtype: type = np.float64
    cg_preconditioner: str = "mass"
    coupling_par: np.ndarray = field(init=False, repr=False)
    coupling_orth: dict = field(init=False, repr=False)

    def __post_init__(self):
        t = self.matrices
        cast = lambda a: np.ascontiguousarray(a, dtype=self.dtype)  # noqa: E731
        # couplings are formed in double precision before any cast
        self.coupling_par = cast(t.deriv @ np.asarray(self.par[1], dtype=np.float64))
        self.coupling_orth = {v: cast(t.mass_orth @ np.asarray(pair[1], dtype=np.float64))
                              for v, pair in self.orth.items()}
        if self.cg_preconditioner not in ("mass", "none"):
            raise ValueError(f"unknown CG preconditioner {self.cg_preconditioner!r}")
        self.mass_inv = cast(np.linalg.inv(t.mass_orth))
        self._double = (self.par, self.orth)
        self.par = tuple(cast(a) for a in self.par)
        self.orth = {v: tuple(cast(a) for a in pair) for v, pair in self.orth.items()}
        self._factors = {}

    def astype(self, dtype):
        par, orth = self._double
        return PatchSolverData(self.dim, self.degree, self.h, self.matrices, par, orth,
                               self.cg_tol, self.cg_max_iter, np.dtype(dtype).type,
                               self.cg_preconditioner)

    @property
    def effective_cg_tol(self):
        if self.dtype == np.float32:
            return max(self.cg_tol, FLOAT32_CG_FLOOR)
        return self.cg_tol

    def directions(self, c, variant):
        """Per direction ``(lam, S, F)`` for component c of a patch with `variant` ends."""
        out = []
        for i in range(self.dim):
            if i == c:
                lam, S = self.par
                F = self.coupling_par
            else:
                lam, S = self.orth[variant[i]]
                F = self.coupling_orth[variant[i]]
            out.append((lam, S, F))
        return out

    def factors(self, c, variant):
        """Cached :class:`_Factors` of component c for patches with `variant` ends."""
        key = (c, variant)
        if key not in self._factors:
            self._factors[key] = _Factors.build(self.directions(c, variant))
        return self._factors[key]

    def velocity_shape(self, c):
        k = self.degree
        return tuple(2 * k + 1 if i == c else 2 * k + 2 for i in range(self.dim))

    @property
    def pressure_shape(self):
        return (2 * self.degree + 2,) * self.dim


def fast_diag_prepare(matrices, dim, cg_tol=1e-12, cg_max_iter=100, dtype=np.float64,
                      cg_preconditioner="mass"):
    """Solve the 1D generalized eigenproblems of all patch directions.

    ``cg_preconditioner="mass"`` preconditions the Schur CG with the inverse
    pressure mass matrix (a Kronecker product of 1D inverses), which keeps
    the iteration count nearly independent of the degree.
    """
    par = _generalized_eig(matrices.lap_par, matrices.mass_par)
    orth = {v: _generalized_eig(matrices.lap_orth[v], matrices.mass_orth)
            for v in itertools.product(END_KINDS, repeat=2)}
    return PatchSolverData(dim, matrices.degree, matrices.h, matrices, par, orth,
                           cg_tol, cg_max_iter, np.dtype(dtype).type, cg_preconditioner)


def _eig_sum(lams, nbatch):
    total = lams[0]
    for lam in lams[1:]:
        total = np.add.outer(lam, total)
    # np.add.outer puts later directions first; reverse to (a_1, ..., a_d)
    total = np.transpose(total, tuple(range(len(lams)))[::-1]) if len(lams) > 1 else total
    return total.reshape(total.shape + (1,) * nbatch)


def _contract_dirs(values, mats):
    for axis, mat in enumerate(mats):
        values = sum_factor_contract(values, mat, axis)
    return values


def _flat_batch(values, d):
    """View with the batch axes merged into one trailing axis."""
    return values.reshape(values.shape[:d] + (-1,))


def apply_Ainv(data, residual, c, variant):
    """Fast-diagonalization solve ``A_c^-1 r`` for component c on a (batch of) patch(es)."""
    f = data.factors(c, variant)
    return _contract_dirs(f.scale(_contract_dirs(residual, f.St)), f.S)


def apply_schur(data, pressure, variant):
    """``S P = B A^-1 B^T P`` via the factors ``F = (D or M') S``."""
    out = None
    for c in range(data.dim):
        f = data.factors(c, variant)
        t = _contract_dirs(f.scale(_contract_dirs(pressure, f.Ft)), f.F)
        out = t if out is None else out + t
    return out


def _project_mean_zero(p, d):
    flat = p.reshape(math.prod(p.shape[:d]), -1)
    return (flat - flat.mean(axis=0)).reshape(p.shape)


def _dot(a, b, d):
    n = math.prod(a.shape[:d])
    return np.einsum("ij,ij->j", a.reshape(n, -1), b.reshape(n, -1))


@dataclass
class LocalSolveInfo:
    """CG statistics of one batched Schur solve."""

    iterations: int = 0
    total_iterations: int = 0
    patches: int = 0
    converged: bool = True

    @property
    def mean_iterations(self):
        return self.total_iterations / self.patches if self.patches else 0.0


def schur_solve(data, F, G, variant, strict=False):
    """Solve the patch saddle problem for velocity residuals F (per component) and pressure residual G.

    The pressure ``S P = B A^-1 F - G`` is found by CG in the mean-zero
    subspace, then ``U_c = A_c^-1 (F_c - B_c^T P)``.  Returns ``(U, P, info)``.
    With ``strict=True`` a CG run that stops at ``cg_max_iter`` raises
    :class:`CGNonConvergence`; otherwise the approximate solution is used.
    """
    d = data.dim
    batch_shape = G.shape[d:]
    G = _flat_batch(G, d)
    # eigenbasis coefficients S^T F_c are needed twice
    spectral = []
    rhs = -G
    for c in range(d):
        f = data.factors(c, variant)
        ft = _contract_dirs(_flat_batch(F[c], d), f.St)
        spectral.append((f, ft))
        # B A^-1 F = -sum_c (x)F_{c,i} Lambda_c^-1 (x)S^T F_c
        rhs = rhs - _contract_dirs(f.scale(ft), f.F)
    rhs = _project_mean_zero(rhs, d)

    P, info = _batched_cg(data, rhs, variant, strict)
    U = []
    for f, ft in spectral:
        # F_c - B_c^T P = F_c + (x)(D or M')^T P
        t = f.scale(ft + _contract_dirs(P, f.Ft))
        u = _contract_dirs(t, f.S)
        U.append(u.reshape(u.shape[:d] + batch_shape))
    info.patches = math.prod(batch_shape)
    return U, P.reshape(P.shape[:d] + batch_shape), info


def _precondition(data, r):
    if data.cg_preconditioner == "none":
        return r.copy()
    return _project_mean_zero(_contract_dirs(r, [data.mass_inv] * data.dim), data.dim)


def _batched_cg(data, rhs, variant, strict):
    """Preconditioned CG on the mean-zero subspace, one independent run per patch.

    `rhs` has the local axes followed by a single batch axis.
    """
    d = data.dim
    tol = data.effective_cg_tol
    x = np.zeros_like(rhs)
    r = rhs.copy()
    res2 = _dot(r, r, d)
    stop = (tol * tol) * res2
    active = res2 > 0
    z = _precondition(data, r)
    rz = _dot(r, z, d)
    p = z
    info = LocalSolveInfo()
    total = 0
    it = 0
    while np.any(active):
        if it == data.cg_max_iter:
            info.converged = False
            if strict:
                ratio = np.sqrt(np.max(np.where(active, res2 / np.where(stop > 0, stop, 1), 0))) * tol
                raise CGNonConvergence(f"Schur CG reached {it} iterations, relative residual {ratio:.2e}")
            break
        it += 1
        total += int(np.count_nonzero(active))
        q = _project_mean_zero(apply_schur(data, p, variant), d)
        pq = _dot(p, q, d)
        alpha = np.where(active, rz / np.where(active, pq, 1), 0).astype(rhs.dtype, copy=False)
        x += alpha * p
        r -= alpha * q
        res2 = _dot(r, r, d)
        active = active & (res2 > stop)
        z = _precondition(data, r)
        rz_new = _dot(r, z, d)
        beta = np.where(active, rz_new / np.where(active, rz, 1), 0).astype(rhs.dtype, copy=False)
        p = z + beta * p
        rz = rz_new
    info.iterations = it
    info.total_iterations = total
    return _project_mean_zero(x, d), info


def _kron(mats):
    """Kronecker product for x-fastest ordering: mats[0] acts on the fastest index."""
    out = mats[-1]
    for mat in mats[-2::-1]:
        out = np.kron(out, mat)
    return out


def kronecker_patch_matrix(matrices, dim, variant):
    """Dense patch saddle matrix from the univariate factors (blocks u_1..u_d, p; x fastest)."""
    t = matrices
    blocks_A, blocks_B = [], []
    for c in range(dim):
        lap = [t.lap_par if i == c else t.lap_orth[variant[i]] for i in range(dim)]
        mass = [t.mass_par if i == c else t.mass_orth for i in range(dim)]
        A = sum(_kron([lap[j] if j == i else mass[j] for j in range(dim)]) for i in range(dim))
        B = -_kron([t.deriv if i == c else t.mixed_mass for i in range(dim)])
        blocks_A.append(A)
        blocks_B.append(B)
    A = scipy.linalg.block_diag(*blocks_A)
    B = np.hstack(blocks_B)
    zero = np.zeros((B.shape[0], B.shape[0]))
    return np.block([[A, B.T], [B, zero]])


def _checked_pinv(matrix, threshold=1e-10):
    u, s, vt = np.linalg.svd(matrix)
    small = int(np.sum(s < threshold * s[0]))
    if small != 1:
        raise ValueError(f"patch matrix has {small} near-zero singular values, expected exactly 1")
    return (vt[:-1].T / s[:-1]) @ u[:, :-1].T


class DirectPatchSolver:
    """Pseudo-inverse of the full patch saddle matrix, truncating the constant-pressure mode.

    Matrices come from the Kronecker factors by default; pass ``assemble`` to
    supply another source, e.g. the dense oracle.
    """

    def __init__(self, matrices, dim, dtype=np.float64, assemble=None):
        self.matrices = matrices
        self.dim = dim
        self.degree = matrices.degree
        self.dtype = np.dtype(dtype).type
        self._assemble = assemble or (lambda variant: kronecker_patch_matrix(matrices, dim, variant))
        self._pinv = {}

    def astype(self, dtype):
        other = DirectPatchSolver(self.matrices, self.dim, dtype, self._assemble)
        other._pinv = {v: m.astype(dtype) for v, m in self._pinv.items()}
        return other

    def pinv(self, variant):
        if variant not in self._pinv:
            self._pinv[variant] = _checked_pinv(self._assemble(variant)).astype(self.dtype)
        return self._pinv[variant]

    def velocity_shape(self, c):
        k = self.degree
        return tuple(2 * k + 1 if i == c else 2 * k + 2 for i in range(self.dim))

    @property
    def pressure_shape(self):
        return (2 * self.degree + 2,) * self.dim


def local_solve_direct(solver, F, G, variant):
    """Apply the truncated pseudo-inverse to a batch of patch residuals; returns (U, P)."""
    d = solver.dim
    batch_shape = G.shape[d:]
    nb = int(np.prod(batch_shape, dtype=np.int64))
    parts = [np.reshape(f, (-1, nb), order="F") for f in F] + [np.reshape(G, (-1, nb), order="F")]
    rhs = np.concatenate(parts, axis=0)
    sol = solver.pinv(variant).astype(rhs.dtype, copy=False) @ rhs
    out = []
    start = 0
    for c in range(d + 1):
        shape = solver.velocity_shape(c) if c < d else solver.pressure_shape
        n = int(np.prod(shape))
        out.append(np.reshape(sol[start:start + n], shape + batch_shape, order="F"))
        start += n
    return out[:d], out[d]
