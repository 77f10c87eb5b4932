import itertools

import numpy as np
import pytest

from stokes_mg.mesh import build_hierarchy, color_patches, color_vertex_sets, enumerate_patches


def test_hierarchy_sizes():
    h = build_hierarchy(2, 3)
    assert [h.cells_per_dir(l) for l in range(4)] == [2, 4, 8, 16]
    assert h.h(2) == pytest.approx(1 / 8)
    assert h.n_cells(1) == 16
    assert len(h.children(0, (1, 0))) == 4
    with pytest.raises(IndexError):
        h.cells_per_dir(4)
    with pytest.raises(ValueError):
        build_hierarchy(4, 1)


def test_children_nest():
    h = build_hierarchy(3, 2)
    kids = h.children(0, (1, 0, 1))
    assert sorted(kids) == sorted(tuple(int(c) for c in [2 + a, 0 + b, 2 + c])
                                  for a, b, c in itertools.product((0, 1), repeat=3))


@pytest.mark.parametrize("dim,level,count", [(2, 1, 9), (3, 1, 27), (2, 0, 1)])
def test_patch_counts(dim, level, count):
    patches = enumerate_patches(build_hierarchy(dim, level), level)
    assert len(patches) == count
    assert all(len(p.cells) == 2 ** dim for p in patches)


def test_single_patch_covers_mesh():
    (patch,) = enumerate_patches(build_hierarchy(2, 0), 0)
    assert sorted(patch.cells) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert color_patches([patch]) == [[0]]


@pytest.mark.parametrize("dim,level", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_parity_coloring(dim, level):
    h = build_hierarchy(dim, level)
    patches = enumerate_patches(h, level)
    colors = color_patches(patches)
    assert len(colors) == 2 ** dim
    assert sorted(i for c in colors for i in c) == list(range(len(patches)))
    for color in colors:
        cells = [c for i in color for c in patches[i].cells]
        assert len(cells) == len(set(cells))
    covered = {c for p in patches for c in p.cells}
    assert len(covered) == h.n_cells(level)


@pytest.mark.parametrize("dim,level", [(2, 2), (3, 2)])
def test_separated_coloring_leaves_a_cell_layer(dim, level):
    patches = enumerate_patches(build_hierarchy(dim, level), level)
    colors = color_patches(patches, "separated")
    assert len(colors) == 3 ** dim
    for color in colors:
        for i, j in itertools.combinations(color, 2):
            gap = max(abs(a - b) for a, b in zip(patches[i].vertex, patches[j].vertex))
            assert gap >= 3


@pytest.mark.parametrize("scheme", ["parity", "separated"])
@pytest.mark.parametrize("dim", [2, 3])
def test_vertex_sets_match_patch_colors(scheme, dim):
    level = 2
    patches = enumerate_patches(build_hierarchy(dim, level), level)
    colors = color_patches(patches, scheme)
    sets = color_vertex_sets(2 ** (level + 1), dim, scheme)
    assert len(sets) == len(colors)
    for color, axes in zip(colors, sets):
        expected = sorted(patches[i].vertex for i in color)
        got = sorted(tuple(int(v) for v in vert) for vert in itertools.product(*axes))
        assert got == expected


def test_unknown_scheme():
    with pytest.raises(ValueError):
        color_vertex_sets(4, 2, "rainbow")
