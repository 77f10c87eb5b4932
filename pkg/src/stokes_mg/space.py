"""Degree-of-freedom layout of RT_k x Q_k on a Cartesian level and block vectors.

Every block (velocity component or pressure) is stored as a d-dimensional
array over global 1D indices, flattened x-fastest (Fortran order) into one
contiguous buffer: ``[u_x, u_y, (u_z), p]``.  Along its own direction a
velocity component has ``m(k+1)+1`` indices (normal DoFs shared between
neighbouring cells), along the others ``m(k+1)``.  The pressure has ``m(k+1)``
per direction.  Normal DoFs on the boundary stay in the buffer but are
constrained to zero.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .fem1d import lagrange_basis, mass_matrix_1d

__all__ = ["DoFLayout", "BlockVector", "build_layout", "gather_cells", "scatter_add_cells",
           "gather_cell", "scatter_add_cell", "project_zero_mean", "remove_constant_mode"]


@dataclass(frozen=True)
class DoFLayout:
    dim: int
    cells: int
    degree: int

    @property
    def n_orth(self):
        return self.cells * (self.degree + 1)

    @property
    def n_par(self):
        return self.n_orth + 1

    def velocity_shape(self, c):
        return tuple(self.n_par if i == c else self.n_orth for i in range(self.dim))

    @property
    def pressure_shape(self):
        return (self.n_orth,) * self.dim

    @cached_property
    def block_shapes(self):
        return [self.velocity_shape(c) for c in range(self.dim)] + [self.pressure_shape]

    @cached_property
    def offsets(self):
        sizes = [int(np.prod(s)) for s in self.block_shapes]
        return np.concatenate(([0], np.cumsum(sizes)))

    @property
    def size(self):
        """Buffer length, constrained entries included."""
        return int(self.offsets[-1])

    @property
    def n_velocity(self):
        return int(self.offsets[self.dim])

    @property
    def n_pressure(self):
        return self.size - self.n_velocity

    @cached_property
    def free_mask(self):
        mask = np.ones(self.size, dtype=bool)
        for c in range(self.dim):
            blk = mask[self.offsets[c]:self.offsets[c + 1]].reshape(self.velocity_shape(c), order="F")
            idx = [slice(None)] * self.dim
            for end in (0, -1):
                idx[c] = end
                blk[tuple(idx)] = False
        mask.setflags(write=False)
        return mask

    @cached_property
    def free_indices(self):
        return np.flatnonzero(self.free_mask)

    @property
    def n_free(self):
        return len(self.free_indices)

    def component_free(self, c):
        """Number of unconstrained DoFs of velocity component c (c == dim: pressure)."""
        return int(self.free_mask[self.offsets[c]:self.offsets[c + 1]].sum())

    def local_shape(self, c):
        """Per-cell node counts of block c (c == dim: pressure)."""
        k = self.degree
        return tuple(k + 2 if i == c else k + 1 for i in range(self.dim))


def build_layout(hierarchy, level, degree):
    if degree < 1:
        raise ValueError("RT_0 (marker-and-cell) is not supported; need degree >= 1")
    return DoFLayout(hierarchy.dim, hierarchy.cells_per_dir(level), degree)


class BlockVector:
    """Velocity components and pressure over one contiguous buffer."""

    __slots__ = ("layout", "data")

    def __init__(self, layout, data=None, dtype=np.float64):
        self.layout = layout
        if data is None:
            data = np.zeros(layout.size, dtype=dtype)
        data = np.asarray(data)
        if data.shape != (layout.size,):
            raise ValueError(f"buffer of length {data.shape} does not match layout size {layout.size}")
        self.data = data

    @classmethod
    def zeros(cls, layout, dtype=np.float64):
        return cls(layout, np.zeros(layout.size, dtype=dtype))

    @property
    def dtype(self):
        return self.data.dtype

    def block(self, c):
        lo, hi = self.layout.offsets[c], self.layout.offsets[c + 1]
        return self.data[lo:hi].reshape(self.layout.block_shapes[c], order="F")

    @property
    def u(self):
        return [self.block(c) for c in range(self.layout.dim)]

    @property
    def p(self):
        return self.block(self.layout.dim)

    def copy(self):
        return BlockVector(self.layout, self.data.copy())

    def astype(self, dtype):
        return BlockVector(self.layout, self.data.astype(dtype))

    def __repr__(self):
        return f"BlockVector(dim={self.layout.dim}, cells={self.layout.cells}, k={self.layout.degree}, dtype={self.dtype})"


def _cell_view(arr, k, local_shape, m, writeable=False):
    """Strided view (a_1..a_d, e_1..e_d) -> arr[e_1(k+1)+a_1, ...]; may overlap."""
    d = arr.ndim
    strides = arr.strides
    return as_strided(arr, shape=tuple(local_shape) + (m,) * d,
                      strides=tuple(strides) + tuple((k + 1) * s for s in strides),
                      writeable=writeable)


def _zero_constrained_local(loc, c, d):
    """Zero the boundary normal DoFs of component c inside the cell tensor."""
    idx = [slice(None)] * (2 * d)
    idx[c], idx[d + c] = 0, 0
    loc[tuple(idx)] = 0.0
    idx[c], idx[d + c] = -1, -1
    loc[tuple(idx)] = 0.0


def gather_cells(layout, vec, c):
    """Cell tensors of block c for all cells, shape (local..., cells...), C-contiguous."""
    arr = vec.block(c)
    loc = np.ascontiguousarray(_cell_view(arr, layout.degree, layout.local_shape(c), layout.cells))
    if c < layout.dim:
        _zero_constrained_local(loc, c, layout.dim)
    return loc


def scatter_add_cells(layout, local, vec, c):
    """Accumulate cell tensors of block c into `vec`; constrained entries end up zero."""
    k, d = layout.degree, layout.dim
    arr = vec.block(c)
    shape = layout.local_shape(c)
    if c == d:
        view = _cell_view(arr, k, shape, layout.cells, writeable=True)
        view += local
        return
    # along its own direction the last node of a cell is the first of the next one
    main = list(shape)
    main[c] = k + 1
    view = _cell_view(arr, k, main, layout.cells, writeable=True)
    idx = [slice(None)] * (2 * d)
    idx[c] = slice(0, k + 1)
    view += local[tuple(idx)]
    shifted = arr[(slice(None),) * c + (slice(k + 1, None),)]
    last = list(shape)
    last[c] = 1
    m = layout.cells
    view = as_strided(shifted, shape=tuple(last) + (m,) * d,
                      strides=tuple(arr.strides) + tuple((k + 1) * s for s in arr.strides),
                      writeable=True)
    idx[c] = slice(k + 1, k + 2)
    view += local[tuple(idx)]
    _zero_boundary(arr, c)


def _zero_boundary(arr, c):
    idx = [slice(None)] * arr.ndim
    for end in (0, -1):
        idx[c] = end
        arr[tuple(idx)] = 0.0


def gather_cell(layout, vec, cell):
    """Local values (u^K_0, ..., u^K_{d-1}, p^K) of one cell, lexicographic."""
    out = []
    for c in range(layout.dim + 1):
        view = _cell_view(vec.block(c), layout.degree, layout.local_shape(c), layout.cells)
        loc = np.array(view[(Ellipsis,) + tuple(cell)])
        if c < layout.dim:
            if cell[c] == 0:
                loc[(slice(None),) * c + (0,)] = 0.0
            if cell[c] == layout.cells - 1:
                loc[(slice(None),) * c + (-1,)] = 0.0
        out.append(loc)
    return out


def scatter_add_cell(layout, local, cell, vec):
    """Add one cell's local values into `vec`, dropping constrained entries."""
    k = layout.degree
    for c, loc in enumerate(local):
        arr = vec.block(c)
        starts = [e * (k + 1) for e in cell]
        idx = tuple(slice(s, s + n) for s, n in zip(starts, loc.shape))
        arr[idx] += loc
        if c < layout.dim:
            _zero_boundary(arr, c)


def pressure_weights_1d(layout):
    """Integrals of the pressure basis functions along one direction."""
    k = layout.degree
    basis = lagrange_basis(k)
    h = 1.0 / layout.cells
    w = mass_matrix_1d(lagrange_basis(0), basis, h)[:, 0]
    return np.tile(w, layout.cells)


def project_zero_mean(layout, p):
    """Subtract the mass-weighted mean so that the pressure integrates to zero."""
    w = pressure_weights_1d(layout)
    mean = p
    for _ in range(layout.dim):
        mean = np.tensordot(w, mean, axes=(0, 0))
    return p - mean.astype(p.dtype)


def remove_constant_mode(p):
    """Euclidean projection onto coefficient vectors orthogonal to all-ones."""
    return p - p.mean()
