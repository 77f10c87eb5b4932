"""Nested uniform Cartesian meshes on the unit hypercube and their vertex patches."""
from dataclasses import dataclass
import itertools

import numpy as np

__all__ = ["MeshHierarchy", "VertexPatch", "build_hierarchy", "enumerate_patches",
           "color_patches", "color_vertex_sets"]


@dataclass(frozen=True)
class MeshHierarchy:
    """Levels 0..max_level; level l has 2**(l+1) cells per direction."""

    dim: int
    max_level: int

    @property
    def levels(self):
        return self.max_level + 1

    def cells_per_dir(self, level):
        self._check(level)
        return 2 ** (level + 1)

    def h(self, level):
        return 1.0 / self.cells_per_dir(level)

    def n_cells(self, level):
        return self.cells_per_dir(level) ** self.dim

    def cells(self, level):
        """Integer cell coordinates, shape (n_cells, dim), x fastest."""
        return _lexicographic(self.cells_per_dir(level), self.dim)

    def children(self, level, cell):
        """The 2**dim children of `cell` on level+1."""
        self._check(level + 1)
        base = 2 * np.asarray(cell)
        return [tuple(base + np.array(off)) for off in itertools.product((0, 1), repeat=self.dim)]

    def _check(self, level):
        if not 0 <= level <= self.max_level:
            raise IndexError(f"level {level} outside 0..{self.max_level}")


def _lexicographic(m, dim):
    idx = np.arange(m ** dim)
    return np.stack([(idx // m ** i) % m for i in range(dim)], axis=1)


@dataclass(frozen=True)
class VertexPatch:
    level: int
    vertex: tuple
    cells: tuple
    color: int


def build_hierarchy(dim, max_level):
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if max_level < 0:
        raise ValueError("max_level must be non-negative")
    return MeshHierarchy(dim, max_level)


def _parity_color(vertex):
    return sum((v % 2) << i for i, v in enumerate(vertex))


def enumerate_patches(hierarchy, level):
    """One patch per interior vertex, x-fastest vertex ordering."""
    m = hierarchy.cells_per_dir(level)
    d = hierarchy.dim
    if m < 2:
        return []
    verts = _lexicographic(m - 1, d) + 1
    patches = []
    for v in verts:
        vertex = tuple(int(a) for a in v)
        cells = tuple(tuple(int(c) for c in np.asarray(vertex) - 1 + np.array(off))
                      for off in itertools.product((0, 1), repeat=d))
        patches.append(VertexPatch(level, vertex, cells, _parity_color(vertex)))
    return patches


def color_patches(patches, scheme="parity"):
    """Group patch indices into colors.

    ``"parity"`` uses the parity of the vertex lattice coordinates (2**dim
    colors); same-colored patches tile the mesh and are cell-disjoint.
    ``"separated"`` uses coordinates modulo 3 (3**dim colors), which leaves a
    full cell layer between same-colored patches so that the DG face terms
    cannot couple them.  Empty colors are dropped.
    """
    if not patches:
        return []
    base = _scheme_base(scheme)
    groups = {}
    for i, p in enumerate(patches):
        key = sum((v % base) * base ** a for a, v in enumerate(p.vertex))
        groups.setdefault(key, []).append(i)
    return [groups[key] for key in sorted(groups)]


def _scheme_base(scheme):
    try:
        return {"parity": 2, "separated": 3}[scheme]
    except KeyError:
        raise ValueError(f"unknown coloring scheme {scheme!r}") from None


def color_vertex_sets(m, dim, scheme="parity"):
    """Per color, the tuple of per-direction vertex coordinate arrays.

    Every color is a tensor product of arithmetic progressions, which is what
    the batched patch kernels rely on.  Colors are ordered like
    :func:`color_patches`.
    """
    base = _scheme_base(scheme)
    out = []
    for residues in itertools.product(range(base), repeat=dim):
        residues = residues[::-1]  # x varies fastest, matching color_patches keys
        axes = tuple(np.arange(1, m)[(np.arange(1, m) % base) == r] for r in residues)
        if all(len(a) for a in axes):
            out.append(axes)
    return out
