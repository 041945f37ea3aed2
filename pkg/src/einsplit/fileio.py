"""Plain-text readers and writers for fields, geometries, operators, trajectories and bases."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .media import ChannelGeometry, ChannelSegment, PermeabilityField


def _fmt(v) -> str:
    return repr(float(v))


def write_field(path, nx: int, ny: int, values) -> None:
    """``nx ny`` header, then one cell value per line (cell = j*nx + i)."""
    values = np.asarray(values, dtype=float)
    if values.size != nx * ny:
        raise ConfigurationError(f"{values.size} values for a {nx}x{ny} grid")
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny}\n")
        fh.write("\n".join(_fmt(v) for v in values) + "\n")


def read_field(path, mesh=None) -> PermeabilityField:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ConfigurationError(f"{path}: missing header")
    nx, ny = int(tokens[0]), int(tokens[1])
    values = np.array(tokens[2:], dtype=float)
    if values.size != nx * ny:
        raise ConfigurationError(f"{path}: expected {nx * ny} values, found {values.size}")
    if mesh is not None and (nx, ny) != (mesh.nx, mesh.ny):
        raise ConfigurationError(f"{path}: grid {nx}x{ny} does not match mesh {mesh.nx}x{mesh.ny}")
    return PermeabilityField(values)


def write_geometry(path, geometry: ChannelGeometry) -> None:
    with open(path, "w") as fh:
        for s in geometry.segments:
            fh.write(f"{_fmt(s.x0)} {_fmt(s.y0)} {_fmt(s.x1)} {_fmt(s.y1)} {int(s.width)} {_fmt(s.value)}\n")


def read_geometry(path) -> ChannelGeometry:
    """One segment per line: ``x0 y0 x1 y1 width value``; ``#`` starts a comment."""
    segs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ConfigurationError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            x0, y0, x1, y1 = (float(v) for v in parts[:4])
            segs.append(ChannelSegment(x0, y0, x1, y1, int(parts[4]), float(parts[5])))
    return ChannelGeometry(tuple(segs))


def write_operator(path, A) -> None:
    """Triplets ``i j value`` sorted by row then column."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for k in order:
            fh.write(f"{C.row[k]} {C.col[k]} {_fmt(C.data[k])}\n")


def read_operator(path, shape) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)


def write_trajectory(path, mesh, trajectory) -> None:
    """Header ``nx ny steps dt``, then one row of node values per saved state."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.nx} {mesh.ny} {len(trajectory.states)} {_fmt(trajectory.dt)}\n")
        for u in trajectory.states:
            fh.write(" ".join(_fmt(v) for v in u) + "\n")


def read_trajectory(path):
    """Returns ``(nx, ny, dt, states)`` with states as a 2-D array (one row per state)."""
    with open(path) as fh:
        head = fh.readline().split()
        nx, ny, steps, dt = int(head[0]), int(head[1]), int(head[2]), float(head[3])
        rows = [np.array(line.split(), dtype=float) for line in fh if line.strip()]
    if len(rows) != steps:
        raise ConfigurationError(f"{path}: header announces {steps} states, found {len(rows)}")
    states = np.vstack(rows) if rows else np.zeros((0, (nx + 1) * (ny + 1)))
    if states.shape[1] != (nx + 1) * (ny + 1):
        raise ConfigurationError(f"{path}: rows do not match the {nx}x{ny} node count")
    return nx, ny, dt, states


def write_basis(path, basis) -> None:
    """Header ``fine_dofs ncols variant layers``; each column is a tag line
    ``block m/j`` followed by a line of dense fine-dof values."""
    P = sp.csc_matrix(basis.psi)
    tags = list(basis.tags1) + list(basis.tags2)
    with open(path, "w") as fh:
        fh.write(f"{P.shape[0]} {P.shape[1]} {basis.variant} {basis.layers}\n")
        for k, (block, cont, idx) in enumerate(tags):
            fh.write(f"{block} {cont}/{idx}\n")
            fh.write(" ".join(_fmt(v) for v in P[:, k].toarray().ravel()) + "\n")


def read_basis(path):
    """Returns ``(variant, layers, tags, dense columns as an n_fine x ncols array)``."""
    with open(path) as fh:
        head = fh.readline().split()
        n, ncols, variant, layers = int(head[0]), int(head[1]), head[2], int(head[3])
        tags, cols = [], []
        for _ in range(ncols):
            b, rest = fh.readline().split()
            cont, idx = rest.split("/")
            tags.append((int(b), cont, int(idx)))
            cols.append(np.array(fh.readline().split(), dtype=float))
    cols = np.column_stack(cols) if cols else np.zeros((n, 0))
    return variant, layers, tags, cols
