"""Geometric multigrid V-cycle for the Stokes system on nested Cartesian levels.

Level 0 (two cells per direction) is solved with the pseudo-inverse of the
assembled coarse matrix.  Every finer level is smoothed once before and once
after the coarse-grid correction.  The transfer between levels is the
canonical injection of the nested RT_k x Q_k spaces, which is a tensor
product of 1D interpolation matrices per block; restriction is its
transpose.  The operator is rediscretized on every level.
"""
from dataclasses import dataclass, field
import time

import numpy as np

from .fem1d import prolongation_1d
from .mesh import build_hierarchy
from .operator import apply_stokes, make_context, sum_factor_contract
from .smoother import PatchSmoother, residual
from .space import BlockVector, build_layout

__all__ = ["MultigridHierarchy", "TransferOperator", "build_multigrid", "prolongate", "restrict",
           "v_cycle", "coarse_solve", "assemble_level_matrix", "CoarseSolveError"]


class CoarseSolveError(RuntimeError):
    pass


class TransferOperator:
    """Prolongation from a coarse to the next finer level, block by block."""

    def __init__(self, coarse, fine, dtype=np.float64):
        if fine.cells != 2 * coarse.cells or fine.degree != coarse.degree or fine.dim != coarse.dim:
            raise ValueError("levels are not nested")
        k, m = coarse.degree, coarse.cells
        self.coarse, self.fine, self.dtype = coarse, fine, dtype
        cont = prolongation_1d(k + 1, m, "continuous").astype(dtype)
        disc = prolongation_1d(k, m, "discontinuous").astype(dtype)
        d = coarse.dim
        self.mats = [[cont if i == c else disc for i in range(d)] for c in range(d)] + [[disc] * d]
        self.mats_t = [[np.ascontiguousarray(a.T) for a in row] for row in self.mats]

    def astype(self, dtype):
        return TransferOperator(self.coarse, self.fine, dtype)

    def prolongate(self, xc, out=None):
        out = BlockVector.zeros(self.fine, self.dtype) if out is None else out
        for c in range(self.coarse.dim + 1):
            out.block(c)[...] = _tensor_apply(xc.block(c), self.mats[c])
        _zero_constrained(out)
        return out

    def restrict(self, xf, out=None):
        out = BlockVector.zeros(self.coarse, self.dtype) if out is None else out
        for c in range(self.coarse.dim + 1):
            out.block(c)[...] = _tensor_apply(xf.block(c), self.mats_t[c])
        _zero_constrained(out)
        return out


def _tensor_apply(arr, mats):
    for axis, mat in enumerate(mats):
        arr = sum_factor_contract(arr, mat, axis)
    return arr


def _zero_constrained(vec):
    d = vec.layout.dim
    for c in range(d):
        blk = vec.block(c)
        for end in (0, -1):
            idx = [slice(None)] * d
            idx[c] = end
            blk[tuple(idx)] = 0.0


def prolongate(transfer, xc):
    return transfer.prolongate(xc)


def restrict(transfer, xf):
    return transfer.restrict(xf)


def assemble_level_matrix(ctx, chunk=64):
    """Matrix of the level operator on the unconstrained DoFs, by applying it to unit vectors."""
    layout = ctx.layout
    free = layout.free_indices
    A = np.zeros((len(free), len(free)), dtype=np.float64)
    x = BlockVector.zeros(layout)
    for j, idx in enumerate(free):
        x.data[idx] = 1.0
        A[:, j] = apply_stokes(ctx, x).data[free]
        x.data[idx] = 0.0
    return A


class CoarseSolver:
    """Pseudo-inverse of the coarse matrix; the constant pressure must be its only null mode."""

    def __init__(self, ctx, threshold=1e-10):
        self.layout = ctx.layout
        self.free = self.layout.free_indices
        matrix = assemble_level_matrix(ctx)
        u, s, vt = np.linalg.svd(matrix)
        null = int(np.sum(s < threshold * s[0]))
        if null != 1:
            raise CoarseSolveError(f"coarse matrix has {null} near-zero singular values, expected 1")
        self.pinv64 = (vt[:-1].T / s[:-1]) @ u[:, :-1].T
        self.pinv = self.pinv64
        self.dtype = np.float64

    def astype(self, dtype):
        other = object.__new__(CoarseSolver)
        other.__dict__.update(self.__dict__)
        other.pinv = self.pinv64.astype(dtype)
        other.dtype = np.dtype(dtype).type
        return other

    def solve(self, b):
        x = BlockVector.zeros(self.layout, self.dtype)
        x.data[self.free] = self.pinv @ b.data[self.free].astype(self.dtype, copy=False)
        return x


def coarse_solve(coarse, b):
    return coarse.solve(b)


@dataclass(eq=False)
class CycleStats:
    cycles: int = 0
    time_smooth: float = 0.0
    time_transfer: float = 0.0
    time_coarse: float = 0.0
    time_residual: float = 0.0


@dataclass(eq=False)
class MultigridHierarchy:
    """Contexts, smoothers and transfers of all levels in one precision."""

    dim: int
    degree: int
    max_level: int
    dtype: type
    layouts: list
    contexts: list
    smoothers: list          # index 0 is unused (coarse level)
    transfers: list          # transfers[l] maps level l-1 to l; index 0 unused
    coarse: CoarseSolver
    smoothing_steps: int = 1
    stats: CycleStats = field(default_factory=CycleStats)

    @property
    def fine_layout(self):
        return self.layouts[-1]

    def astype(self, dtype):
        """The same hierarchy with every level operation in `dtype`."""
        dtype = np.dtype(dtype).type
        contexts = [ctx.astype(dtype) for ctx in self.contexts]
        smoothers = [None] + [s.with_context(c) for s, c in zip(self.smoothers[1:], contexts[1:])]
        transfers = [None] + [t.astype(dtype) for t in self.transfers[1:]]
        return MultigridHierarchy(self.dim, self.degree, self.max_level, dtype, self.layouts,
                                  contexts, smoothers, transfers, self.coarse.astype(dtype),
                                  self.smoothing_steps)

    def v_cycle(self, b, level=None):
        return v_cycle(self, b, self.max_level if level is None else level)

    def cg_statistics(self):
        total = sum(s.stats.cg.total_iterations for s in self.smoothers[1:])
        patches = sum(s.stats.cg.patches for s in self.smoothers[1:])
        return (total / patches if patches else 0.0), max(
            (s.stats.cg.iterations for s in self.smoothers[1:]), default=0)


def build_multigrid(dim, degree, max_level, local="schur", dtype=np.float64, scheme="parity",
                    cg_tol=1e-12, cg_max_iter=100, kernel="collapsed", smoothing_steps=1):
    """Set up all levels 0..max_level for RT_degree x Q_degree."""
    hierarchy = build_hierarchy(dim, max_level)
    layouts = [build_layout(hierarchy, lvl, degree) for lvl in range(max_level + 1)]
    contexts = [make_context(lay, np.float64, kernel) for lay in layouts]
    smoothers = [None] + [PatchSmoother(ctx, local, scheme, cg_tol, cg_max_iter)
                          for ctx in contexts[1:]]
    transfers = [None] + [TransferOperator(layouts[lvl - 1], layouts[lvl])
                          for lvl in range(1, max_level + 1)]
    coarse = CoarseSolver(contexts[0])
    mg = MultigridHierarchy(dim, degree, max_level, np.float64, layouts, contexts, smoothers,
                            transfers, coarse, smoothing_steps)
    dtype = np.dtype(dtype).type
    return mg if dtype == np.float64 else mg.astype(dtype)


def v_cycle(mg, b, level):
    """One V-cycle with zero initial guess; returns an approximation of A^-1 b on `level`."""
    stats = mg.stats
    if level == mg.max_level:
        stats.cycles += 1
    if level == 0:
        t = time.perf_counter()
        x = mg.coarse.solve(b)
        stats.time_coarse += time.perf_counter() - t
        return x
    smoother = mg.smoothers[level]
    x = BlockVector.zeros(mg.layouts[level], mg.dtype)
    t = time.perf_counter()
    smoother.smooth(x, b, mg.smoothing_steps)
    stats.time_smooth += time.perf_counter() - t

    t = time.perf_counter()
    r = residual(mg.contexts[level], x, b)
    stats.time_residual += time.perf_counter() - t
    t = time.perf_counter()
    rc = mg.transfers[level].restrict(r)
    stats.time_transfer += time.perf_counter() - t

    ec = v_cycle(mg, rc, level - 1)

    t = time.perf_counter()
    x.data += mg.transfers[level].prolongate(ec).data
    stats.time_transfer += time.perf_counter() - t
    t = time.perf_counter()
    smoother.smooth(x, b, mg.smoothing_steps)
    stats.time_smooth += time.perf_counter() - t
    return x
