"""Colorized multiplicative vertex-patch Schwarz smoother.

One smoothing step walks the colors in a fixed order.  For every color the
residual ``b - A x`` is computed afresh on the whole level, and all patches
of that color are then solved at once against it and added to ``x``.

The patches of one color are processed as a batch.  Each color is a tensor
product of arithmetic progressions of vertices, so the patch tensors of a
color can be read and written through strided views of the global blocks
without copying index lists.  A color is split further by the boundary
contact of its patches (first and last vertex per direction), because those
patches use different 1D eigenpairs.
"""
from dataclasses import dataclass, field
import itertools

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .local_solver import (DirectPatchSolver, LocalSolveInfo, build_patch_matrices,
                           fast_diag_prepare, local_solve_direct, schur_solve)
from .mesh import color_vertex_sets
from .operator import (_mass_along, apply_stokes, boundary_integrals, cell_integrals,
                       face_integrals, sum_factor_contract)
from .space import BlockVector, gather_cell

__all__ = ["PatchSmoother", "PatchBatch", "LocalSolverError", "smooth", "patch_residual_gather",
           "residual"]


class LocalSolverError(RuntimeError):
    """A local solve failed; carries the patch vertices involved."""

    def __init__(self, message, vertices):
        super().__init__(f"{message} (patches around {vertices})")
        self.vertices = vertices


@dataclass(frozen=True)
class PatchBatch:
    """Patches at ``start_i + step_i * n`` (n < count_i) in each direction, all with the same ends."""

    start: tuple
    step: tuple
    count: tuple
    variant: tuple

    @property
    def size(self):
        return int(np.prod(self.count))

    def vertices(self):
        axes = [range(s, s + st * n, st) for s, st, n in zip(self.start, self.step, self.count)]
        return [v[::-1] for v in itertools.product(*axes[::-1])]


def _split_axis(verts, m):
    """Split a vertex progression by boundary contact: (start, step, count, ends) groups."""
    verts = [int(v) for v in verts]
    step = verts[1] - verts[0] if len(verts) > 1 else 1
    groups = []
    rest = verts
    if rest and rest[0] == 1:
        ends = ("nitsche", "nitsche" if m == 2 else "interior")
        groups.append((1, 1, 1, ends))
        rest = rest[1:]
    tail = None
    if rest and rest[-1] == m - 1:
        tail = (m - 1, 1, 1, ("interior", "nitsche"))
        rest = rest[:-1]
    if rest:
        groups.append((rest[0], step, len(rest), ("interior", "interior")))
    if tail:
        groups.append(tail)
    return groups


def color_batches(m, dim, scheme="parity"):
    """Per color, the list of :class:`PatchBatch` covering its patches."""
    out = []
    for axes in color_vertex_sets(m, dim, scheme):
        per_axis = [_split_axis(a, m) for a in axes]
        batches = []
        for combo in itertools.product(*per_axis[::-1]):
            combo = combo[::-1]
            batches.append(PatchBatch(tuple(g[0] for g in combo), tuple(g[1] for g in combo),
                                      tuple(g[2] for g in combo), tuple(g[3] for g in combo)))
        out.append(batches)
    return out


def _patch_view(arr, k, c, batch, writeable=False):
    """Strided (local..., batch...) view of block array `arr` over the patches of `batch`.

    ``c`` is the velocity component owning the block (``c == arr.ndim`` for
    the pressure); along its own direction only the 2k+1 patch-interior
    nodes are included.
    """
    d = arr.ndim
    lo, local = [], []
    for i in range(d):
        first = (batch.start[i] - 1) * (k + 1)
        if i == c:
            lo.append(first + 1)
            local.append(2 * k + 1)
        else:
            lo.append(first)
            local.append(2 * k + 2)
    base = arr[tuple(slice(s, None) for s in lo)]
    strides = arr.strides
    batch_strides = tuple(st * (k + 1) * s for st, s in zip(batch.step, strides))
    return as_strided(base, shape=tuple(local) + tuple(batch.count),
                      strides=tuple(strides) + batch_strides, writeable=writeable)


def residual(ctx, x, b, out=None):
    """Global residual ``b - A x``."""
    out = apply_stokes(ctx, x, out)
    np.subtract(b.data, out.data, out=out.data)
    return out


@dataclass(eq=False)
class SmootherStats:
    steps: int = 0
    local_solves: int = 0
    cg: LocalSolveInfo = field(default_factory=LocalSolveInfo)

    @property
    def mean_cg_iterations(self):
        return self.cg.mean_iterations


class PatchSmoother:
    """Multiplicative Schwarz smoother over all vertex patches of one level.

    ``local`` selects the patch solver: ``"schur"`` (fast diagonalization with
    a Schur-complement CG) or ``"direct"`` (pseudo-inverse of the assembled
    patch matrix).  ``scheme`` is the coloring, see
    :func:`stokes_mg.mesh.color_patches`.
    """

    def __init__(self, ctx, local="schur", scheme="parity", cg_tol=1e-12, cg_max_iter=100,
                 cg_preconditioner="mass"):
        if local not in ("schur", "direct"):
            raise ValueError(f"unknown local solver {local!r}")
        self.ctx = ctx
        self.layout = ctx.layout
        self.local = local
        self.scheme = scheme
        layout = self.layout
        if layout.cells < 2:
            raise ValueError("a level needs at least 2 cells per direction to have vertex patches")
        matrices = build_patch_matrices(1.0 / layout.cells, layout.degree)
        if local == "schur":
            self.solver = fast_diag_prepare(matrices, layout.dim, cg_tol, cg_max_iter, ctx.dtype,
                                            cg_preconditioner)
        else:
            self.solver = DirectPatchSolver(matrices, layout.dim, ctx.dtype)
        self.colors = color_batches(layout.cells, layout.dim, scheme)
        self.stats = SmootherStats()

    @property
    def n_colors(self):
        return len(self.colors)

    @property
    def n_patches(self):
        return sum(b.size for color in self.colors for b in color)

    def with_context(self, ctx):
        """Same smoother on another precision of the same level."""
        other = object.__new__(PatchSmoother)
        other.__dict__.update(self.__dict__)
        other.ctx = ctx
        other.solver = self.solver.astype(ctx.dtype)
        other.stats = SmootherStats()
        return other

    def solve_batch(self, F, G, batch):
        if self.local == "schur":
            try:
                U, P, info = schur_solve(self.solver, F, G, batch.variant)
            except Exception as exc:  # attach the patch identity
                raise LocalSolverError(str(exc), batch.vertices()) from exc
            cg = self.stats.cg
            cg.total_iterations += info.total_iterations
            cg.patches += info.patches
            cg.iterations = max(cg.iterations, info.iterations)
            cg.converged = cg.converged and info.converged
            return U, P
        try:
            return local_solve_direct(self.solver, F, G, batch.variant)
        except Exception as exc:
            raise LocalSolverError(str(exc), batch.vertices()) from exc

    def smooth(self, x, b, steps=1):
        """Apply `steps` smoothing passes to x in place and return it."""
        layout = self.layout
        d, k = layout.dim, layout.degree
        r = BlockVector.zeros(layout, self.ctx.dtype)
        for _ in range(steps):
            for color in self.colors:
                residual(self.ctx, x, b, out=r)
                r_blocks = [r.block(c) for c in range(d + 1)]
                x_blocks = [x.block(c) for c in range(d + 1)]
                for batch in color:
                    F = [np.array(_patch_view(r_blocks[c], k, c, batch)) for c in range(d)]
                    G = np.array(_patch_view(r_blocks[d], k, d, batch))
                    U, P = self.solve_batch(F, G, batch)
                    for c in range(d):
                        view = _patch_view(x_blocks[c], k, c, batch, writeable=True)
                        view += U[c].astype(view.dtype, copy=False)
                    view = _patch_view(x_blocks[d], k, d, batch, writeable=True)
                    view += P.astype(view.dtype, copy=False)
                    self.stats.local_solves += batch.size
            self.stats.steps += 1
        return x


def smooth(smoother, x, b, steps=1):
    """Functional form of :meth:`PatchSmoother.smooth`."""
    return smoother.smooth(x, b, steps)


def _single_batch(vertex, m):
    variant = tuple(("nitsche" if v == 1 else "interior", "nitsche" if v == m - 1 else "interior")
                    for v in vertex)
    return PatchBatch(tuple(vertex), (1,) * len(vertex), (1,) * len(vertex), variant)


def patch_residual_gather(ctx, x, b, vertex, mode="global"):
    """Residual ``b - A x`` on the DoFs of the patch around `vertex`.

    Returns the per-block patch tensors ``[F_1, ..., F_d, G]``.  ``mode="global"``
    restricts a full residual; ``mode="halo"`` evaluates the operator only on
    the patch cells and the faces they touch.
    """
    layout = ctx.layout
    d, k, m = layout.dim, layout.degree, layout.cells
    batch = _single_batch(vertex, m)
    if mode == "global":
        r = residual(ctx, x, b)
        return [np.array(_patch_view(r.block(c), k, c, batch))[(Ellipsis,) + (0,) * d]
                for c in range(d + 1)]
    if mode != "halo":
        raise ValueError(f"unknown residual mode {mode!r}")
    ax = BlockVector.zeros(layout, ctx.dtype)
    cells = [tuple(int(v) - 1 + o for v, o in zip(vertex, off))
             for off in itertools.product((0, 1), repeat=d)]
    for cell in cells:
        _add_cell_action(ctx, x, cell, ax)
    out = []
    for c in range(d + 1):
        rb = b.block(c) - ax.block(c)
        out.append(np.array(_patch_view(rb, k, c, batch))[(Ellipsis,) + (0,) * d])
    return out


def _as_batch(local, d):
    return local.reshape(local.shape + (1,) * d)


def _add_cell_action(ctx, x, cell, out):
    """Add the rows of A x that belong to the test functions of one cell."""
    layout = ctx.layout
    d, k, m = layout.dim, layout.degree, layout.cells
    local = gather_cell(layout, x, cell)
    us = [_as_batch(u, d) for u in local[:d]]
    ys, z = cell_integrals(ctx, us, _as_batch(local[d], d))
    E = ctx.tables["E"]
    for c in range(d):
        y = ys[c]
        for axis in range(d):
            if axis == c:
                continue
            tr = sum_factor_contract(us[c], E, axis)
            coef = np.zeros_like(tr)
            for side in (0, 1):
                nb = list(cell)
                nb[axis] += 1 if side else -1
                row_v, row_d = (1, 3) if side else (0, 2)
                own = (_row(tr, axis, row_v), _row(tr, axis, row_d))
                if 0 <= nb[axis] < m:
                    other = _as_batch(gather_cell(layout, x, tuple(nb))[c], d)
                    otr = sum_factor_contract(other, E, axis)
                    if side:
                        (s, t), _ = face_integrals(ctx, own, (_row(otr, axis, 0), _row(otr, axis, 2)))
                    else:
                        _, (s, t) = face_integrals(ctx, (_row(otr, axis, 1), _row(otr, axis, 3)), own)
                else:
                    s, t = boundary_integrals(ctx, own, side)
                _set_row(coef, axis, row_v, s)
                _set_row(coef, axis, row_d, t)
            coef = _mass_along(ctx, coef, c, [j for j in range(d) if j != axis])
            y = y + sum_factor_contract(coef, np.ascontiguousarray(E.T), axis)
        ys[c] = y
    starts = [e * (k + 1) for e in cell]
    for c, loc in enumerate(ys + [z]):
        loc = loc[(Ellipsis,) + (0,) * d]
        blk = out.block(c)
        idx = tuple(slice(s, s + n) for s, n in zip(starts, loc.shape))
        blk[idx] += loc
        if c < d:
            # constrained normal DoFs carry no equation
            for end in (0, -1):
                sel = [slice(None)] * d
                sel[c] = end
                blk[tuple(sel)] = 0.0


def _row(tr, axis, row):
    idx = [slice(None)] * tr.ndim
    idx[axis] = slice(row, row + 1)
    return tr[tuple(idx)]


def _set_row(arr, axis, row, value):
    idx = [slice(None)] * arr.ndim
    idx[axis] = slice(row, row + 1)
    arr[tuple(idx)] += value
