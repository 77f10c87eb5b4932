"""Brute-force dense assembly of the Stokes matrix, for verification only.

Entries are computed pairwise from vector-valued basis functions evaluated
at physical quadrature points, with the face terms written in their dyadic
average form.  Nothing here goes through the sum-factorization kernels, and
the quadrature has one more point per direction than the production path.
"""
import itertools

import numpy as np

from .fem1d import gauss_lobatto_points, gauss_quadrature, penalty_parameter
from .space import DoFLayout

__all__ = ["DenseSystem", "dense_assemble", "dense_patch_assemble", "patch_indices",
           "reference_patch_matrix", "pseudo_inverse", "export_triplets", "OracleSizeError"]

DEFAULT_CAP = 20000


class OracleSizeError(ValueError):
    pass


def _lagrange_table(nodes, x):
    """Values and derivatives of all cardinal functions at x (explicit products)."""
    n = len(nodes)
    x = np.asarray(x, dtype=float)
    val = np.ones((n, len(x)))
    der = np.zeros((n, len(x)))
    for j in range(n):
        for m in range(n):
            if m != j:
                val[j] *= (x - nodes[m]) / (nodes[j] - nodes[m])
        for l in range(n):
            if l == j:
                continue
            term = np.full(len(x), 1.0 / (nodes[j] - nodes[l]))
            for m in range(n):
                if m != j and m != l:
                    term *= (x - nodes[m]) / (nodes[j] - nodes[m])
            der[j] += term
    return val, der


class DenseSystem:
    """Dense matrix on the unconstrained DoFs plus the map to buffer indices."""

    def __init__(self, layout, matrix, free, h):
        self.layout = layout
        self.matrix = matrix
        self.free = free          # buffer index of each row
        self.h = h

    @property
    def n_velocity_rows(self):
        return int(np.sum(self.free < self.layout.n_velocity))

    def to_dense(self, vec):
        return vec.data[self.free]

    def from_dense(self, values, dtype=np.float64):
        out = np.zeros(self.layout.size, dtype=dtype)
        out[self.free] = values
        return out


def _block_index(layout, c, multi):
    shape = layout.block_shapes[c]
    flat = 0
    stride = 1
    for i, n in zip(multi, shape):
        flat += i * stride
        stride *= n
    return int(layout.offsets[c] + flat)


def _cell_functions(layout, cell, h, points, nodes_par, nodes_orth):
    """All basis functions living on `cell`: buffer index, component, value, gradient at points.

    ``points`` has shape (npts, d) in physical coordinates.  Returns lists of
    (index, comp, val[npts], grad[npts, d]); comp == d marks pressure.
    """
    d = layout.dim
    k = layout.degree
    ref = (points - np.asarray(cell) * h) / h
    tables = {}
    for name, nodes in (("par", nodes_par), ("orth", nodes_orth)):
        tables[name] = [_lagrange_table(nodes, ref[:, i]) for i in range(d)]
    out = []
    for c in range(d + 1):
        local = [k + 2 if i == c else k + 1 for i in range(d)]
        for a in itertools.product(*[range(n) for n in local]):
            glob = [cell[i] * (k + 1) + a[i] for i in range(d)]
            if c < d and glob[c] in (0, layout.n_par - 1):
                continue
            names = ["par" if i == c else "orth" for i in range(d)]
            vals = [tables[names[i]][i][0][a[i]] for i in range(d)]
            ders = [tables[names[i]][i][1][a[i]] / h for i in range(d)]
            val = np.prod(vals, axis=0)
            grad = np.empty((len(points), d))
            for j in range(d):
                g = ders[j].copy()
                for i in range(d):
                    if i != j:
                        g *= vals[i]
                grad[:, j] = g
            out.append((_block_index(layout, c, glob), c, val, grad))
    return out


def _tensor_points(nq, d, origin, h, skip=None, at=None):
    q = gauss_quadrature(nq)
    axes_pts, axes_w = [], []
    for i in range(d):
        if i == skip:
            axes_pts.append(np.array([at]))
            axes_w.append(np.array([1.0]))
        else:
            axes_pts.append(origin[i] * h + h * q.points)
            axes_w.append(h * q.weights)
    grids = np.meshgrid(*axes_pts, indexing="ij")
    wgrid = np.ones_like(grids[0])
    for i, w in enumerate(np.meshgrid(*axes_w, indexing="ij")):
        wgrid = wgrid * w
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return pts, wgrid.ravel()


def dense_assemble(layout, h=None, cap=DEFAULT_CAP):
    """Assemble the full saddle-point matrix on the unconstrained DoFs.

    The mesh has ``layout.cells`` cells of width h per direction
    (default 1/cells, i.e. the unit hypercube).
    """
    d, k, m = layout.dim, layout.degree, layout.cells
    h = 1.0 / m if h is None else h
    free = layout.free_indices
    if len(free) > cap:
        raise OracleSizeError(f"{len(free)} unknowns exceed the oracle cap of {cap}")
    row_of = -np.ones(layout.size, dtype=np.int64)
    row_of[free] = np.arange(len(free))
    A = np.zeros((len(free), len(free)))
    gamma = penalty_parameter(k, h)
    nq = k + 3
    nodes_par = gauss_lobatto_points(k + 2)
    nodes_orth = gauss_lobatto_points(k + 1)

    # cells
    for cell in itertools.product(range(m), repeat=d):
        pts, w = _tensor_points(nq, d, cell, h)
        funcs = _cell_functions(layout, cell, h, pts, nodes_par, nodes_orth)
        rows = row_of[[f[0] for f in funcs]]
        comp = np.array([f[1] for f in funcs])
        val = np.array([f[2] for f in funcs])
        grad = np.array([f[3] for f in funcs])
        # velocity-velocity: sum_q w (grad phi_i : grad phi_j), same component only
        gg = np.einsum("iqa,jqa,q->ij", grad, grad, w)
        gg *= (comp[:, None] == comp[None, :]) & (comp[:, None] < d)
        # pressure test, velocity ansatz: -(q, div u)
        div = grad[np.arange(len(funcs)), :, np.minimum(comp, d - 1)]
        bq = -np.einsum("iq,jq,q->ij", val, div, w)
        bq *= (comp[:, None] == d) & (comp[None, :] < d)
        local = gg + bq + bq.T
        A[np.ix_(rows, rows)] += local

    # faces
    for axis in range(d):
        for cell in itertools.product(range(m), repeat=d):
            e = cell[axis]
            sides = []
            if e < m - 1:
                nb = list(cell)
                nb[axis] += 1
                at = (e + 1) * h
                sides = [(cell, +1.0), (tuple(nb), -1.0)]
                boundary = False
            else:
                at = m * h
                sides = [(cell, +1.0)]
                boundary = True
            _face(A, row_of, layout, axis, sides, at, boundary, h, gamma, nq, nodes_par, nodes_orth)
            if e == 0:
                _face(A, row_of, layout, axis, [(cell, -1.0)], 0.0, True, h, gamma, nq,
                      nodes_par, nodes_orth)
    return DenseSystem(layout, A, free, h)


def _face(A, row_of, layout, axis, sides, at, boundary, h, gamma, nq, nodes_par, nodes_orth):
    d = layout.dim
    origin = sides[0][0]
    pts, w = _tensor_points(nq, d, origin, h, skip=axis, at=at)
    # per global velocity function: {phi (x) n} and {grad phi}, or raw traces on the boundary
    dyad, avg_grad = {}, {}
    for cell, sign in sides:
        n = np.zeros(d)
        n[axis] = sign
        for g, c, val, grad in _cell_functions(layout, cell, h, pts, nodes_par, nodes_orth):
            if c == d:
                continue
            vec = np.zeros((len(pts), d))
            vec[:, c] = val
            gt = np.zeros((len(pts), d, d))
            gt[:, c, :] = grad
            factor = 1.0 if boundary else 0.5
            dyad[g] = dyad.get(g, 0.0) + factor * vec[:, :, None] * n[None, None, :]
            avg_grad[g] = avg_grad.get(g, 0.0) + factor * gt
    keys = list(dyad)
    rows = row_of[keys]
    dy = np.array([dyad[g] for g in keys])
    gr = np.array([avg_grad[g] for g in keys])
    pen = np.einsum("iqab,jqab,q->ij", dy, dy, w)
    cons = np.einsum("jqab,iqab,q->ij", gr, dy, w)
    if boundary:
        # 2 gamma <u, v> - <d_n u, v> - <u, d_n v>, with u (x) n carrying the normal
        local = 2.0 * gamma * pen - cons - cons.T
    else:
        local = 4.0 * gamma * pen - 2.0 * cons - 2.0 * cons.T
    A[np.ix_(rows, rows)] += local


def patch_indices(layout, vertex):
    """Buffer indices of the patch subspace around an interior vertex, block by block, x fastest."""
    d, k = layout.dim, layout.degree
    out = []
    for c in range(d + 1):
        ranges = []
        for i in range(d):
            lo = (vertex[i] - 1) * (k + 1)
            if i == c:
                ranges.append(range(lo + 1, lo + 2 * (k + 1)))
            else:
                ranges.append(range(lo, lo + 2 * (k + 1)))
        for multi in itertools.product(*ranges[::-1]):
            out.append(_block_index(layout, c, multi[::-1]))
    return np.array(out)


def dense_patch_assemble(system, vertex):
    """Principal submatrix of the patch around `vertex` (zero extension outside)."""
    idx = patch_indices(system.layout, vertex)
    row_of = -np.ones(system.layout.size, dtype=np.int64)
    row_of[system.free] = np.arange(len(system.free))
    rows = row_of[idx]
    if np.any(rows < 0):
        raise ValueError("patch contains constrained DoFs")
    return system.matrix[np.ix_(rows, rows)]


def reference_patch_matrix(dim, k, h, left_boundary, right_boundary):
    """Dense patch matrix for a given mesh size and boundary contact per direction.

    ``left_boundary[i]``/``right_boundary[i]`` say whether the patch touches the
    domain boundary at its lower/upper end in direction i.  The patch is cut
    out of a 4-cell (2-cell if it touches both ends) mesh with cells of width h.
    """
    both = [lb and rb for lb, rb in zip(left_boundary, right_boundary)]
    if any(both):
        if not all(both):
            raise ValueError("a patch touching both ends of one direction touches both ends of all")
        m, vertex = 2, (1,) * dim
    else:
        m = 4
        vertex = tuple(1 if lb else 3 if rb else 2 for lb, rb in zip(left_boundary, right_boundary))
    system = dense_assemble(DoFLayout(dim, m, k), h=h)
    return dense_patch_assemble(system, vertex)


def pseudo_inverse(matrix, threshold=1e-10):
    """Moore-Penrose inverse dropping singular values below threshold * sigma_max."""
    u, s, vt = np.linalg.svd(matrix)
    keep = s > threshold * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def export_triplets(system, path):
    """Write nonzeros as 'row col value' lines (0-based rows of the dense system)."""
    rows, cols = np.nonzero(system.matrix)
    with open(path, "w") as fh:
        fh.write(f"# {system.matrix.shape[0]} {system.matrix.shape[1]} {len(rows)}\n")
        for r, c in zip(rows, cols):
            fh.write(f"{r} {c} {system.matrix[r, c]:.17g}\n")
