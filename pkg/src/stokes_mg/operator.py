"""Matrix-free Stokes operator for RT_k x Q_k with an interior penalty Laplacian.

The global action runs three vectorized loops, as in the classic cell/face
matrix-free scheme: a cell loop (gradient and divergence terms), a loop over
interior faces and one over boundary faces.  All cells (or faces) of a level
are processed at once as a batch; within a cell every interpolation is a
sequence of 1D contractions (sum factorization).

Cell tensors are laid out ``(a_1, ..., a_d, e_1, ..., e_d)`` with the local
node indices first, so each 1D contraction is a handful of large GEMMs.

Block form (symmetric saddle point)::

    [ A   B^T ] [u]   [f]        B_ij = -(psi_i, div phi_j)
    [ B   0   ] [p] = [0]

The minus sign makes ``p_h`` approximate ``p`` in ``-lap u + grad p = f``.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .fem1d import gauss_quadrature, penalty_parameter, velocity_bases
from .space import BlockVector, gather_cells, scatter_add_cells

__all__ = ["OperatorContext", "make_context", "sum_factor_contract", "apply_stokes",
           "cell_integrals", "face_integrals", "boundary_integrals", "trace_matrix"]


def sum_factor_contract(values, matrix, axis):
    """Contract `matrix` (out x in) with `values` along `axis`."""
    shape = values.shape
    if matrix.shape[1] != shape[axis]:
        raise ValueError(f"matrix with {matrix.shape[1]} columns cannot act on axis of length {shape[axis]}")
    lead = math.prod(shape[:axis])
    trail = math.prod(shape[axis + 1:])
    x = values.reshape(lead, shape[axis], trail)
    if lead == 1:
        y = matrix @ x[0]
    else:
        y = np.matmul(matrix, x)
    return y.reshape(shape[:axis] + (matrix.shape[0],) + shape[axis + 1:])


def _contract_all(values, mats):
    for axis, mat in enumerate(mats):
        if mat is not None:
            values = sum_factor_contract(values, mat, axis)
    return values


@dataclass(eq=False)
class OperatorContext:
    """Per-level data of the matrix-free operator.

    ``kernel="collapsed"`` applies precomputed 1D cell matrices (steps b-d of
    the cell loop collapse into Kronecker products on Cartesian cells);
    ``kernel="quadrature"`` interpolates into quadrature points, forms the
    integrands there and integrates back.
    """

    layout: object
    dtype: type = np.float64
    kernel: str = "collapsed"
    h: float = field(init=False)
    penalty: float = field(init=False)
    tables: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.kernel not in ("collapsed", "quadrature"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        k = self.layout.degree
        self.h = 1.0 / self.layout.cells
        self.penalty = penalty_parameter(k, self.h)
        par, orth = velocity_bases(k)
        q = gauss_quadrature(k + 2)
        h = self.h
        t = {}
        t["weights"] = q.weights
        for name, basis in (("par", par), ("orth", orth)):
            v = basis.values(q.points).T
            g = basis.derivatives(q.points).T
            t[f"V_{name}"] = v
            t[f"G_{name}"] = g
            t[f"M_{name}"] = h * (v.T * q.weights) @ v
            t[f"K_{name}"] = (g.T * q.weights) @ g / h
        t["D"] = (t["V_orth"].T * q.weights) @ t["G_par"]
        t["E"] = trace_matrix(orth, h)
        t["wh"] = q.weights * h
        self.tables = {key: np.ascontiguousarray(val, dtype=self.dtype) for key, val in t.items()}

    @property
    def dim(self):
        return self.layout.dim

    @property
    def degree(self):
        return self.layout.degree

    def basis_name(self, c, axis):
        return "par" if axis == c else "orth"

    def astype(self, dtype):
        return OperatorContext(self.layout, dtype, self.kernel)


def make_context(layout, dtype=np.float64, kernel="collapsed"):
    return OperatorContext(layout, np.dtype(dtype).type, kernel)


def trace_matrix(basis, h):
    """Rows: value at 0, value at 1, d/dx at 0, d/dx at 1 (physical scaling)."""
    vals = basis.values([0.0, 1.0]).T
    ders = basis.derivatives([0.0, 1.0]).T / h
    return np.vstack((vals, ders))


def _mass_along(ctx, values, c, axes):
    """Tangential mass (face measure) along `axes` for component c."""
    t = ctx.tables
    for axis in axes:
        name = ctx.basis_name(c, axis)
        if ctx.kernel == "collapsed":
            values = sum_factor_contract(values, t[f"M_{name}"], axis)
        else:
            v = t[f"V_{name}"]
            values = sum_factor_contract(values, v, axis)
            shape = [1] * values.ndim
            shape[axis] = -1
            values = values * t["wh"].reshape(shape)
            values = sum_factor_contract(values, np.ascontiguousarray(v.T), axis)
    return values


def cell_integrals(ctx, us, p):
    """Cell loop for all cells at once.

    Returns ``(ys, z)`` with ``ys[c]_i = (grad u, grad phi_i) - (p, div phi_i)``
    and ``z_i = -(psi_i, div u)`` on each cell.
    """
    if ctx.kernel == "collapsed":
        return _cell_collapsed(ctx, us, p)
    return _cell_quadrature(ctx, us, p)


def _cell_collapsed(ctx, us, p):
    t = ctx.tables
    d = ctx.dim
    ys = []
    z = None
    for c, u in enumerate(us):
        mass = [t[f"M_{ctx.basis_name(c, i)}"] for i in range(d)]
        stiff = [t[f"K_{ctx.basis_name(c, i)}"] for i in range(d)]
        y = _kron_sum(u, stiff, mass)
        # divergence coupling: D along c, pressure-velocity mass elsewhere
        dmats = [t["D"] if i == c else t["M_orth"] for i in range(d)]
        zc = _contract_all(u, dmats)
        z = zc if z is None else z + zc
        y -= _contract_all(p, [np.ascontiguousarray(m.T) for m in dmats])
        ys.append(y)
    return ys, -z


def _kron_sum(u, stiff, mass):
    """sum_i (K_i in direction i, M_j elsewhere) applied to u."""
    d = len(stiff)
    if d == 2:
        return (sum_factor_contract(sum_factor_contract(u, mass[1], 1), stiff[0], 0)
                + sum_factor_contract(sum_factor_contract(u, stiff[1], 1), mass[0], 0))
    t2 = sum_factor_contract(u, mass[2], 2)
    y = sum_factor_contract(sum_factor_contract(t2, mass[1], 1), stiff[0], 0)
    rest = sum_factor_contract(t2, stiff[1], 1)
    rest += sum_factor_contract(sum_factor_contract(u, stiff[2], 2), mass[1], 1)
    y += sum_factor_contract(rest, mass[0], 0)
    return y


def _cell_quadrature(ctx, us, p):
    t = ctx.tables
    d = ctx.dim
    h = ctx.h
    nq = len(t["weights"])
    w = t["weights"]
    wq = w
    for _ in range(d - 1):
        wq = np.multiply.outer(wq, w)
    wq = (wq * h ** d).reshape((nq,) * d + (1,) * d).astype(ctx.dtype)
    vp = t["V_orth"]
    p_q = _contract_all(p, [vp] * d)
    div_q = 0.0
    ys = []
    for c, u in enumerate(us):
        vals = [t[f"V_{ctx.basis_name(c, i)}"] for i in range(d)]
        grads = [t[f"G_{ctx.basis_name(c, i)}"] / h for i in range(d)]
        y = None
        for i in range(d):
            mats = [grads[j] if j == i else vals[j] for j in range(d)]
            gi = _contract_all(u, mats)
            if i == c:
                div_q = div_q + gi
                r = (gi - p_q) * wq
            else:
                r = gi * wq
            back = _contract_all(r, [np.ascontiguousarray(m.T) for m in mats])
            y = back if y is None else y + back
        ys.append(y)
    z = -_contract_all(div_q * wq, [np.ascontiguousarray(vp.T)] * d)
    return ys, z


def face_integrals(ctx, minus, plus):
    """Numerical flux on interior faces from the traces of both sides.

    ``minus``/``plus`` hold (value, normal derivative d/dx_axis) of the
    lower/upper cell at the shared face.  Returns, per side, the
    coefficients multiplying the test function value and its derivative:
    ``((s, t), (-s, t))`` with ``s = gamma [u] - {u'}`` and ``t = -[u]/2``.
    """
    um, dm = minus
    up, dp = plus
    jump = um - up
    s = ctx.penalty * jump - 0.5 * (dm + dp)
    t = -0.5 * jump
    return (s, t), (-s, t)


def boundary_integrals(ctx, trace, side):
    """Nitsche terms ``2 gamma u v - d_n u v - u d_n v`` on a boundary face.

    ``side`` is 0 for the face at x_axis = 0 (outward normal -e_axis) and 1
    for x_axis = 1.  Returns the coefficients of (test value, test d/dx).
    """
    u, du = trace
    sign = -1.0 if side == 0 else 1.0
    return 2.0 * ctx.penalty * u - sign * du, -sign * u


def _face_terms(ctx, u, c, axis):
    """Interior and boundary face contributions of component c on faces normal to `axis`."""
    d = ctx.dim
    E = ctx.tables["E"]
    tr = sum_factor_contract(u, E, axis)  # rows: v(0), v(1), v'(0), v'(1)
    coef = np.zeros_like(tr)

    def pick(row, cells):
        idx = [slice(None)] * tr.ndim
        idx[axis] = row
        idx[d + axis] = cells
        return tuple(idx)

    m = u.shape[d + axis]
    lo, hi = slice(0, m - 1), slice(1, m)
    minus = (tr[pick(1, lo)], tr[pick(3, lo)])
    plus = (tr[pick(0, hi)], tr[pick(2, hi)])
    (sm, tm), (sp, tp) = face_integrals(ctx, minus, plus)
    coef[pick(1, lo)] += sm
    coef[pick(3, lo)] += tm
    coef[pick(0, hi)] += sp
    coef[pick(2, hi)] += tp
    first, last = slice(0, 1), slice(m - 1, m)
    s0, t0 = boundary_integrals(ctx, (tr[pick(0, first)], tr[pick(2, first)]), 0)
    coef[pick(0, first)] += s0
    coef[pick(2, first)] += t0
    s1, t1 = boundary_integrals(ctx, (tr[pick(1, last)], tr[pick(3, last)]), 1)
    coef[pick(1, last)] += s1
    coef[pick(3, last)] += t1
    coef = _mass_along(ctx, coef, c, [j for j in range(d) if j != axis])
    return sum_factor_contract(coef, np.ascontiguousarray(E.T), axis)


def apply_stokes(ctx, x, out=None):
    """y = A x for a BlockVector x on the context's level."""
    layout = ctx.layout
    if x.layout != layout:
        raise ValueError("vector layout does not match operator level")
    dtype = ctx.dtype
    if out is None:
        out = BlockVector.zeros(layout, dtype)
    else:
        out.data[:] = 0.0
    d = layout.dim
    us = [gather_cells(layout, x, c).astype(dtype, copy=False) for c in range(d)]
    p = gather_cells(layout, x, d).astype(dtype, copy=False)
    ys, z = cell_integrals(ctx, us, p)
    for c in range(d):
        y = ys[c]
        for axis in range(d):
            # the normal component is continuous: no jumps, no face terms
            if axis != c:
                y += _face_terms(ctx, us[c], c, axis)
        scatter_add_cells(layout, y, out, c)
    scatter_add_cells(layout, z, out, d)
    return out
