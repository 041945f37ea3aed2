import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from einsplit.errors import ConfigurationError
from einsplit.mesh import build_hierarchy, local_dof_map, oversample_region, region_from_blocks


def test_counts_and_spacing():
    m = build_hierarchy(100, 100, 10, 10)
    assert m.n_nodes == 10201
    assert m.n_cells == 10000
    assert m.block_shape == (10, 10)
    assert m.hx == pytest.approx(0.01)


def test_single_block():
    m = build_hierarchy(4, 4, 1, 1)
    assert m.n_blocks == 1
    assert np.all(m.cell_to_block == 0)


@pytest.mark.parametrize("args, name", [((10, 10, 3, 5), "Nx=3"), ((10, 9, 5, 2), "Ny=2"), ((2, 2, 4, 4), "smaller")])
def test_rejects_incompatible_counts(args, name):
    with pytest.raises(ConfigurationError, match=name):
        build_hierarchy(*args)


def test_cell_nodes_counter_clockwise():
    m = build_hierarchy(3, 2, 1, 1, extent=(3.0, 2.0))
    c = m.coords[m.cell_nodes[4]]  # cell i=1, j=1
    assert np.allclose(c, [[1, 1], [2, 1], [2, 2], [1, 2]])


def test_oversampling_clipped_at_corner_and_full_in_middle():
    m = build_hierarchy(16, 16, 4, 4)
    assert len(oversample_region(m, 0, 1).blocks) == 4
    assert len(oversample_region(m, 5, 1).blocks) == 9
    assert len(oversample_region(m, 5, 10).blocks) == 16
    with pytest.raises(ConfigurationError):
        oversample_region(m, 16, 1)
    with pytest.raises(ConfigurationError):
        oversample_region(m, 0, -1)


def test_local_dof_map_single_block():
    # a 4x4-cell block has 25 nodes: 16 on its boundary, 9 inside
    m = build_hierarchy(4, 4, 1, 1)
    nodes, mask = local_dof_map(m, oversample_region(m, 0, 0))
    assert nodes.size == 25
    assert mask.sum() == 16


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
def test_block_of_cell_matches_centres(Nx, Ny, bx, by):
    m = build_hierarchy(Nx * bx, Ny * by, Nx, Ny, extent=(2.0, 1.0))
    cc = m.cell_centers
    I = np.floor(cc[:, 0] / (2.0 / Nx)).astype(int)
    J = np.floor(cc[:, 1] / (1.0 / Ny)).astype(int)
    assert np.array_equal(m.cell_to_block, J * Nx + I)
    assert all(m.block_cells(b).size == bx * by for b in range(m.n_blocks))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2), st.data())
def test_rectangular_region_boundary_is_its_perimeter(N, layers, data):
    m = build_hierarchy(2 * N, 2 * N, N, N)
    b = data.draw(st.integers(0, N * N - 1))
    reg = oversample_region(m, b, layers)
    bi, bj = m.block_ij(b)
    nx = 2 * (min(N, bi + layers + 1) - max(0, bi - layers))
    ny = 2 * (min(N, bj + layers + 1) - max(0, bj - layers))
    assert reg.nodes.size == (nx + 1) * (ny + 1)
    assert reg.boundary_nodes.size == 2 * (nx + ny)


def test_region_from_blocks_union():
    m = build_hierarchy(6, 6, 3, 3)
    reg = region_from_blocks(m, [0, 1])
    assert reg.cells.size == 8
    assert np.all(np.isin(m.cell_to_block[reg.cells], [0, 1]))
