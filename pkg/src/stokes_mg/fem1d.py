"""Univariate finite element building blocks.

Every cell and patch operator of the Raviart-Thomas/DG-pressure Stokes
discretization on a Cartesian mesh is a sum of Kronecker products of the
one-dimensional matrices produced here.  Reference interval is [0, 1].
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

__all__ = [
    "Quadrature1D",
    "Basis1D",
    "Tensor1DSet",
    "gauss_quadrature",
    "gauss_lobatto_points",
    "lagrange_basis",
    "velocity_bases",
    "penalty_parameter",
    "mass_matrix_1d",
    "stiffness_matrix_1d",
    "sipg_laplace_1d",
    "derivative_matrix_1d",
    "embedding_1d",
    "assemble_1d",
    "prolongation_1d",
    "tensor_set",
]


@dataclass(frozen=True)
class Quadrature1D:
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return len(self.points)


@lru_cache(maxsize=None)
def gauss_quadrature(n):
    """n-point Gauss-Legendre rule on [0, 1]; exact up to degree 2n-1."""
    if n < 1:
        raise ValueError(f"need at least one quadrature point, got n={n}")
    x, w = npleg.leggauss(n)
    points = 0.5 * (x + 1.0)
    weights = 0.5 * w
    points.setflags(write=False)
    weights.setflags(write=False)
    return Quadrature1D(points, weights)


@lru_cache(maxsize=None)
def gauss_lobatto_points(n):
    """n Gauss-Lobatto points on [0, 1] (n >= 2), endpoints included."""
    if n < 2:
        raise ValueError("Gauss-Lobatto rule needs at least two points")
    interior = npleg.Legendre.basis(n - 1).deriv().roots() if n > 2 else []
    pts = np.concatenate(([-1.0], np.sort(np.real(interior)), [1.0]))
    pts = 0.5 * (pts + 1.0)
    pts.setflags(write=False)
    return pts


@dataclass(frozen=True, eq=False)
class Basis1D:
    """Nodal Lagrange basis on the reference interval.

    Evaluation goes through Legendre expansions of the cardinal functions,
    which stays well conditioned at Gauss-Lobatto nodes.
    """

    nodes: np.ndarray
    _coeffs: np.ndarray = field(init=False, repr=False)
    _dcoeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        vander = npleg.legvander(2.0 * nodes - 1.0, len(nodes) - 1)
        coeffs = np.linalg.inv(vander)
        object.__setattr__(self, "_coeffs", coeffs)
        if len(nodes) > 1:
            dcoeffs = 2.0 * npleg.legder(coeffs, axis=0)
        else:
            dcoeffs = np.zeros((1, 1))
        object.__setattr__(self, "_dcoeffs", dcoeffs)

    @property
    def degree(self):
        return len(self.nodes) - 1

    @property
    def size(self):
        return len(self.nodes)

    def values(self, x):
        """Basis values, shape (n_basis, len(x))."""
        t = 2.0 * np.atleast_1d(np.asarray(x, dtype=float)) - 1.0
        return (npleg.legvander(t, self.degree) @ self._coeffs).T

    def derivatives(self, x):
        """First derivatives on the reference interval, shape (n_basis, len(x))."""
        t = 2.0 * np.atleast_1d(np.asarray(x, dtype=float)) - 1.0
        if self.degree == 0:
            return np.zeros((1, len(t)))
        return (npleg.legvander(t, self.degree - 1) @ self._dcoeffs).T


@lru_cache(maxsize=None)
def lagrange_basis(degree):
    """Lagrange basis of given degree at Gauss-Lobatto nodes (midpoint for degree 0)."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if degree == 0:
        return Basis1D(np.array([0.5]))
    return Basis1D(gauss_lobatto_points(degree + 1))


def velocity_bases(k):
    """(parallel, orthogonal) bases of an RT_k velocity component; pressure uses the orthogonal one."""
    return lagrange_basis(k + 1), lagrange_basis(k)


def penalty_parameter(k, h):
    """Interior penalty coefficient gamma_e = (k+1)(k+2)/h."""
    return (k + 1) * (k + 2) / h


def _quadrature_for(*degrees):
    return gauss_quadrature(sum(degrees) // 2 + 1)


def mass_matrix_1d(ansatz, test, h=1.0):
    """Entry (i, j) = h * int_0^1 test_i ansatz_j."""
    q = _quadrature_for(ansatz.degree, test.degree)
    return h * (test.values(q.points) * q.weights) @ ansatz.values(q.points).T


def stiffness_matrix_1d(basis, h=1.0):
    """Entry (i, j) = (1/h) * int_0^1 phi_i' phi_j' on one cell."""
    q = _quadrature_for(basis.degree, basis.degree)
    g = basis.derivatives(q.points)
    return (g * q.weights) @ g.T / h


def derivative_matrix_1d(pressure_basis, velocity_basis):
    """Entry (i, j) = int_0^1 psi_i phi_j' on one reference cell.

    The result does not depend on the mesh size: the 1/h of the derivative
    cancels the h of the measure.
    """
    q = _quadrature_for(pressure_basis.degree, velocity_basis.degree)
    return (pressure_basis.values(q.points) * q.weights) @ velocity_basis.derivatives(q.points).T


def _dof_index(cells, n, shared):
    """Global 1D index of (cell, local node), shape (cells, n)."""
    stride = n - 1 if shared else n
    return np.arange(cells)[:, None] * stride + np.arange(n)[None, :]


def assemble_1d(local, cells, row_shared=False, col_shared=False):
    """Assemble identical per-cell blocks on `cells` consecutive intervals.

    Shared numbering glues the last node of a cell to the first node of the
    next one (continuous Lagrange), otherwise the blocks are disjoint.
    """
    nr, nc = local.shape
    rows = _dof_index(cells, nr, row_shared)
    cols = _dof_index(cells, nc, col_shared)
    out = np.zeros((rows.max() + 1, cols.max() + 1))
    for e in range(cells):
        out[np.ix_(rows[e], cols[e])] += local
    return out


_BOUNDARY_KINDS = ("nitsche", "interior", "none")


def _normalize_bc(bc):
    if isinstance(bc, str):
        bc = (bc, bc)
    left, right = ("nitsche" if b == "weak-nitsche" else b for b in bc)
    for b in (left, right):
        if b not in _BOUNDARY_KINDS:
            raise ValueError(f"unknown boundary treatment {b!r}")
    return left, right


def sipg_laplace_1d(degree, cells, h, penalty, bc="weak-nitsche"):
    """Interior penalty Laplacian on `cells` intervals of length h.

    Interior faces carry ``penalty*[u][v] - {u'}[v] - [u]{v'}``.  At the two
    ends, ``bc`` selects (per end when given as a pair):

    * ``"weak-nitsche"``: domain boundary, ``2*penalty*uv -/+ (u'v + uv')``
    * ``"interior"``: one-sided trace of an interior face whose other side is
      outside the interval (half of the Nitsche terms)
    * ``"none"``: no end terms (constants are in the kernel)
    * ``"strong-zero"``: continuous Lagrange basis with both end nodes
      eliminated; there are no jumps, so only the stiffness remains.
    """
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    basis = lagrange_basis(degree)
    stiff = stiffness_matrix_1d(basis, h)
    if bc == "strong-zero":
        full = assemble_1d(stiff, cells, True, True)
        return full[1:-1, 1:-1]

    left, right = _normalize_bc(bc)
    n = basis.size
    out = assemble_1d(stiff, cells)
    v0, v1 = basis.values([0.0, 1.0]).T
    d0, d1 = basis.derivatives([0.0, 1.0]).T / h
    for e in range(cells - 1):
        jump = np.zeros(out.shape[0])
        avg = np.zeros(out.shape[0])
        jump[e * n:(e + 1) * n] = v1
        jump[(e + 1) * n:(e + 2) * n] = -v0
        avg[e * n:(e + 1) * n] = 0.5 * d1
        avg[(e + 1) * n:(e + 2) * n] = 0.5 * d0
        out += penalty * np.outer(jump, jump) - np.outer(jump, avg) - np.outer(avg, jump)
    scale = {"nitsche": 1.0, "interior": 0.5, "none": 0.0}
    # outward normal derivative is -d/dx on the left end, +d/dx on the right
    s = scale[left]
    if s:
        blk = slice(0, n)
        out[blk, blk] += s * (2.0 * penalty * np.outer(v0, v0) + np.outer(v0, d0) + np.outer(d0, v0))
    s = scale[right]
    if s:
        blk = slice((cells - 1) * n, cells * n)
        out[blk, blk] += s * (2.0 * penalty * np.outer(v1, v1) - np.outer(v1, d1) - np.outer(d1, v1))
    return out


def embedding_1d(degree, continuity="discontinuous"):
    """Coarse-cell basis expressed in the bases of its two children.

    Rows run over child nodes (left child first; the shared midpoint appears
    once for ``continuity="continuous"``), columns over coarse basis functions.
    """
    basis = lagrange_basis(degree)
    child_pts = np.concatenate((0.5 * basis.nodes, 0.5 + 0.5 * basis.nodes))
    emb = basis.values(child_pts).T
    if continuity == "continuous":
        if degree < 1:
            raise ValueError("continuous embedding needs degree >= 1")
        emb = np.delete(emb, basis.size, axis=0)
    elif continuity != "discontinuous":
        raise ValueError(f"unknown continuity {continuity!r}")
    return emb


def prolongation_1d(degree, coarse_cells, continuity="discontinuous"):
    """Global 1D embedding from `coarse_cells` intervals into their bisection."""
    emb = embedding_1d(degree, continuity)
    n = degree + 1
    shared = continuity == "continuous"
    rows = _dof_index(2 * coarse_cells, n, shared)
    cols = _dof_index(coarse_cells, n, shared)
    out = np.zeros((rows.max() + 1, cols.max() + 1))
    for e in range(coarse_cells):
        child_rows = np.concatenate((rows[2 * e], rows[2 * e + 1][1:] if shared else rows[2 * e + 1]))
        out[np.ix_(child_rows, cols[e])] = emb
    return out


@dataclass(frozen=True)
class Tensor1DSet:
    """Univariate matrices of one mesh size for RT_k x Q_k.

    ``par`` quantities refer to the continuous degree k+1 basis of a velocity
    component along its own direction, ``orth`` to the discontinuous degree k
    basis in the remaining directions (shared by the pressure).  For ``cells``
    intervals the parallel matrices have both end nodes eliminated.
    ``lap_orth`` maps an (left, right) end treatment to the SIPG Laplacian.
    """

    degree: int
    h: float
    cells: int
    penalty: float
    mass_par: np.ndarray
    lap_par: np.ndarray
    mass_orth: np.ndarray
    lap_orth: dict
    deriv: np.ndarray
    mixed_mass: np.ndarray

    @property
    def n_par(self):
        return self.mass_par.shape[0]

    @property
    def n_orth(self):
        return self.mass_orth.shape[0]


def tensor_set(k, h, cells):
    """All univariate factors on `cells` intervals of length h for RT_k."""
    if k < 1:
        raise ValueError("only RT_k with k >= 1 is supported")
    par, orth = velocity_bases(k)
    gamma = penalty_parameter(k, h)
    mass_par = assemble_1d(mass_matrix_1d(par, par, h), cells, True, True)[1:-1, 1:-1]
    lap_par = sipg_laplace_1d(k + 1, cells, h, gamma, "strong-zero")
    mass_orth = assemble_1d(mass_matrix_1d(orth, orth, h), cells)
    kinds = ("nitsche", "interior")
    lap_orth = {(a, b): sipg_laplace_1d(k, cells, h, gamma, (a, b)) for a in kinds for b in kinds}
    deriv = assemble_1d(derivative_matrix_1d(orth, par), cells, False, True)[:, 1:-1]
    mixed_mass = assemble_1d(mass_matrix_1d(orth, orth, h), cells)
    return Tensor1DSet(k, h, cells, gamma, mass_par, lap_par, mass_orth, lap_orth, deriv, mixed_mass)
