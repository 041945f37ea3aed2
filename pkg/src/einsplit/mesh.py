"""Nested coarse/fine rectangular grids.

Nodes are numbered row-major with y as the outer index, ``node = j*(nx+1) + i``;
cells likewise ``cell = j*nx + i``.  Local node order inside a cell is
counter-clockwise from the lower-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class MeshHierarchy:
    extent: tuple[float, float]
    fine_cells: tuple[int, int]
    coarse_blocks: tuple[int, int]

    @property
    def nx(self) -> int:
        return self.fine_cells[0]

    @property
    def ny(self) -> int:
        return self.fine_cells[1]

    @property
    def hx(self) -> float:
        return self.extent[0] / self.nx

    @property
    def hy(self) -> float:
        return self.extent[1] / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_blocks(self) -> int:
        return self.coarse_blocks[0] * self.coarse_blocks[1]

    @property
    def block_shape(self) -> tuple[int, int]:
        """Fine cells per coarse block along x and y."""
        return (self.nx // self.coarse_blocks[0], self.ny // self.coarse_blocks[1])

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @cached_property
    def coords(self) -> np.ndarray:
        x = np.linspace(0.0, self.extent[0], self.nx + 1)
        y = np.linspace(0.0, self.extent[1], self.ny + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ll = (j * (self.nx + 1) + i).ravel()
        return np.column_stack([ll, ll + 1, ll + self.nx + 2, ll + self.nx + 1])

    @cached_property
    def cell_centers(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.column_stack([((i + 0.5) * self.hx).ravel(), ((j + 0.5) * self.hy).ravel()])

    @cached_property
    def cell_to_block(self) -> np.ndarray:
        bx, by = self.block_shape
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return ((j // by) * self.coarse_blocks[0] + i // bx).ravel()

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Indices of nodes on the boundary of the whole domain."""
        c = self.coords
        tol = 1e-12 * max(self.extent)
        on = (
            (c[:, 0] < tol)
            | (c[:, 1] < tol)
            | (c[:, 0] > self.extent[0] - tol)
            | (c[:, 1] > self.extent[1] - tol)
        )
        return np.flatnonzero(on)

    def block_cells(self, block: int) -> np.ndarray:
        return np.flatnonzero(self.cell_to_block == block)

    def block_ij(self, block: int) -> tuple[int, int]:
        return block % self.coarse_blocks[0], block // self.coarse_blocks[0]

    def nearest_node(self, x: float, y: float) -> int:
        i = int(np.clip(np.floor(x / self.hx + 0.5), 0, self.nx))
        j = int(np.clip(np.floor(y / self.hy + 0.5), 0, self.ny))
        return j * (self.nx + 1) + i

    def cells_nodes(self, cells) -> np.ndarray:
        return np.unique(self.cell_nodes[np.asarray(cells, dtype=int)].ravel())


def build_hierarchy(nx, ny, Nx, Ny, extent=(1.0, 1.0)) -> MeshHierarchy:
    for name, v in (("nx", nx), ("ny", ny), ("Nx", Nx), ("Ny", Ny)):
        if int(v) != v or v < 1:
            raise ConfigurationError(f"{name}={v} must be a positive integer")
    if nx < Nx or ny < Ny:
        raise ConfigurationError(f"fine counts ({nx}, {ny}) smaller than coarse ({Nx}, {Ny})")
    if nx % Nx:
        raise ConfigurationError(f"nx={nx} is not divisible by Nx={Nx}")
    if ny % Ny:
        raise ConfigurationError(f"ny={ny} is not divisible by Ny={Ny}")
    if min(extent) <= 0:
        raise ConfigurationError(f"extent {extent} must be positive")
    return MeshHierarchy(
        (float(extent[0]), float(extent[1])), (int(nx), int(ny)), (int(Nx), int(Ny))
    )


@dataclass(frozen=True)
class CellSet:
    """A union of coarse blocks with its fine cells and nodes.

    ``boundary_nodes`` are the nodes on the topological boundary of the region,
    including any part lying on the domain boundary.
    """

    blocks: np.ndarray
    cells: np.ndarray
    nodes: np.ndarray
    boundary_nodes: np.ndarray


def region_from_blocks(mesh: MeshHierarchy, blocks) -> CellSet:
    blocks = np.unique(np.asarray(blocks, dtype=int))
    in_region = np.isin(mesh.cell_to_block, blocks)
    cells = np.flatnonzero(in_region)
    nodes = mesh.cells_nodes(cells)
    # a node is interior to the region iff all four surrounding cells are in it
    count = np.bincount(mesh.cell_nodes[cells].ravel(), minlength=mesh.n_nodes)
    boundary = nodes[count[nodes] < 4]
    return CellSet(blocks, cells, nodes, boundary)


def oversample_region(mesh: MeshHierarchy, block: int, layers: int) -> CellSet:
    if not 0 <= block < mesh.n_blocks:
        raise ConfigurationError(f"block index {block} outside [0, {mesh.n_blocks})")
    if layers < 0:
        raise ConfigurationError(f"layers={layers} must be non-negative")
    Nx, Ny = mesh.coarse_blocks
    bi, bj = mesh.block_ij(block)
    xs = range(max(0, bi - layers), min(Nx, bi + layers + 1))
    ys = range(max(0, bj - layers), min(Ny, bj + layers + 1))
    return region_from_blocks(mesh, [j * Nx + i for j in ys for i in xs])


def local_dof_map(mesh: MeshHierarchy, region: CellSet):
    """Return ``(local_to_global, boundary_mask)`` for the region's nodes."""
    local_to_global = region.nodes
    mask = np.isin(local_to_global, region.boundary_nodes)
    return local_to_global, mask
