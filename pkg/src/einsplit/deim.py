"""POD compression of the per-cell nonlinear coefficient and DEIM interpolation.

Snapshots live on fine cells, so the stiffness matrix is affine in the
snapshot and each POD mode has an exact offline stiffness tensor.  Online,
kappa is evaluated only at the interpolation cells and the coarse stiffness
blocks are a short linear combination of precomputed ones.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import fem
from .errors import ConfigurationError, NumericalError
from .mesh import MeshHierarchy
from .multiscale import MultiscaleBasis, project_pair


@dataclass(frozen=True)
class SnapshotSet:
    Y: np.ndarray  # n_cells x n_snapshots
    source: str = "unknown"
    stride: int = 1

    def __post_init__(self):
        if self.Y.ndim != 2 or self.Y.shape[1] < 1:
            raise ConfigurationError("snapshot set needs at least one column")


@dataclass(frozen=True)
class PodBasis:
    U: np.ndarray
    sigma: np.ndarray  # all singular values, descending
    energy_threshold: float

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def r(self) -> int:
        return int(np.count_nonzero(self.sigma > 0))

    def captured_energy(self) -> float:
        return float(self.sigma[: self.m].sum() / self.sigma.sum())


@dataclass(frozen=True)
class DeimModel:
    pod: PodBasis
    indices: np.ndarray
    PtU: np.ndarray
    lu: tuple
    condition: float
    A_f: list  # fine stiffness per mode (sparse)
    A_H1: np.ndarray  # m x n1 x n1
    A_H2: np.ndarray  # m x n2 x n2
    A_H12: np.ndarray  # m x n1 x n2

    @property
    def m(self) -> int:
        return self.pod.m


def coefficient_snapshot(mesh: MeshHierarchy, field, law, u) -> np.ndarray:
    return fem.nonlinear_coefficient(mesh, field, law, u)


def collect_snapshots(spec, trajectory, stride: int = 1, law=None) -> SnapshotSet:
    """Columns kappa_x * kappa_u(cell average of u) for every stride-th saved state."""
    if stride < 1:
        raise ConfigurationError("snapshot stride must be at least 1")
    states = list(trajectory.states) if hasattr(trajectory, "states") else list(trajectory)
    if not states:
        raise ConfigurationError("cannot collect snapshots from an empty trajectory")
    law = spec.law if law is None else law
    cols = [coefficient_snapshot(spec.mesh, spec.field, law, u) for u in states[::stride]]
    return SnapshotSet(np.column_stack(cols), source=getattr(trajectory, "label", "trajectory"),
                       stride=stride)


def pod(snapshots, energy: float = 0.9999) -> PodBasis:
    """Keep the fewest left singular vectors whose summed singular values reach ``energy``."""
    Y = snapshots.Y if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots, dtype=float)
    if not 0.0 < energy <= 1.0:
        raise ConfigurationError(f"energy threshold {energy} outside (0, 1]")
    if not 0.9 < energy < 1.0:
        warnings.warn(f"energy threshold {energy} outside the usual range (0.9, 1)", stacklevel=2)
    if not np.all(np.isfinite(Y)):
        raise NumericalError("non-finite snapshot values")
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise NumericalError("snapshot matrix is identically zero")
    # drop numerically null directions before thresholding
    s = np.where(s > s[0] * np.finfo(float).eps * max(Y.shape), s, 0.0)
    frac = np.cumsum(s) / s.sum()
    m = int(np.searchsorted(frac, energy * (1 - 1e-14)) + 1)
    m = min(m, int(np.count_nonzero(s)))
    return PodBasis(U[:, :m].copy(), s, energy)


def deim_indices(basis) -> np.ndarray:
    """Greedy interpolation points; ties go to the lowest index."""
    U = basis.U if isinstance(basis, PodBasis) else np.asarray(basis, dtype=float)
    if U.ndim != 2 or U.shape[1] < 1:
        raise ConfigurationError("DEIM needs at least one basis vector")
    idx = [int(np.argmax(np.abs(U[:, 0])))]
    for i in range(1, U.shape[1]):
        W = U[:, :i]
        PtW = W[idx, :]
        if np.linalg.cond(PtW) > 1e14:
            raise NumericalError(f"singular interpolation system at DEIM step {i}")
        c = np.linalg.solve(PtW, U[idx, i])
        res = np.abs(U[:, i] - W @ c)
        p = int(np.argmax(res))
        if p in idx:
            raise NumericalError(f"DEIM selected a repeated index at step {i}")
        idx.append(p)
    return np.array(idx, dtype=int)


def offline_tensors(basis: PodBasis, mesh: MeshHierarchy, ms_basis: MultiscaleBasis,
                    indices=None) -> DeimModel:
    if basis.U.shape[0] != mesh.n_cells:
        raise ConfigurationError("POD modes must have one entry per fine cell")
    if ms_basis.n_fine != mesh.n_nodes:
        raise ConfigurationError("multiscale basis does not match the mesh")
    idx = deim_indices(basis) if indices is None else np.asarray(indices, dtype=int)
    PtU = basis.U[idx, :]
    try:
        lu = sla.lu_factor(PtU, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise NumericalError(f"cannot factor the interpolation matrix: {exc}") from exc
    if np.any(np.diag(lu[0]) == 0):
        raise NumericalError("interpolation matrix is singular")
    cond = float(np.linalg.cond(PtU))
    if cond >= 1e12:
        warnings.warn(f"DEIM interpolation matrix condition number {cond:.2e}", stacklevel=2)
    A_f, H1, H2, H12 = [], [], [], []
    for k in range(basis.m):
        A = fem.assemble_stiffness(mesh, basis.U[:, k], check_positive=False)
        a1, a2, a12 = project_pair(ms_basis, A)
        A_f.append(A)
        H1.append(a1)
        H2.append(a2)
        H12.append(a12)
    return DeimModel(basis, idx, PtU, lu, cond, A_f, np.array(H1), np.array(H2), np.array(H12))


def build_deim_model(mesh, ms_basis, snapshots, energy: float = 0.9999) -> DeimModel:
    return offline_tensors(pod(snapshots, energy), mesh, ms_basis)


def interpolation_cells_nodes(model: DeimModel, mesh: MeshHierarchy) -> np.ndarray:
    return mesh.cell_nodes[model.indices]


def online_coefficients(model: DeimModel, u, field, law, mesh: MeshHierarchy) -> np.ndarray:
    """Solve (P^T U) c = P^T kappa(u), evaluating kappa only on the interpolation cells."""
    u = np.asarray(u, dtype=float)
    cells = model.indices
    avg = u[mesh.cell_nodes[cells]].mean(axis=1)
    vals = field.values[cells] * law.evaluate(avg)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite kappa at DEIM interpolation cells")
    return sla.lu_solve(model.lu, vals)


def online_coefficients_from_cell_averages(model: DeimModel, avg, field, law) -> np.ndarray:
    vals = field.values[model.indices] * law.evaluate(np.asarray(avg, dtype=float))
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite kappa at DEIM interpolation cells")
    return sla.lu_solve(model.lu, vals)


def online_coarse_matrices(model: DeimModel, c):
    c = np.asarray(c, dtype=float)
    if c.shape != (model.m,):
        raise ConfigurationError("coefficient vector length differs from the mode count")
    return (np.tensordot(c, model.A_H1, axes=1), np.tensordot(c, model.A_H2, axes=1),
            np.tensordot(c, model.A_H12, axes=1))


def reconstruct(model: DeimModel, c) -> np.ndarray:
    return model.pod.U @ np.asarray(c, dtype=float)


def save_model(model: DeimModel, path) -> None:
    """Text dump: counts, U columns, indices, then flattened coarse tensors (C order)."""
    U = model.pod.U
    n1 = model.A_H1.shape[1]
    n2 = model.A_H2.shape[1]
    with open(path, "w") as fh:
        fh.write(f"{U.shape[0]} {model.m} {n1} {n2}\n")
        for k in range(model.m):
            fh.write(" ".join(repr(float(v)) for v in U[:, k]) + "\n")
        fh.write(" ".join(str(int(i)) for i in model.indices) + "\n")
        for T in (model.A_H1, model.A_H2, model.A_H12):
            fh.write(" ".join(repr(float(v)) for v in T.ravel()) + "\n")


def load_model(path):
    """Read a dump written by :func:`save_model`; returns ``(U, indices, A_H1, A_H2, A_H12)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    n, m, n1, n2 = (int(v) for v in lines[0].split())
    U = np.array([[float(v) for v in lines[1 + k].split()] for k in range(m)]).T.reshape(n, m)
    idx = np.array([int(v) for v in lines[1 + m].split()], dtype=int)
    H1 = np.array(lines[2 + m].split(), dtype=float).reshape(m, n1, n1)
    H2 = np.array(lines[3 + m].split(), dtype=float).reshape(m, n2, n2)
    H12 = np.array(lines[4 + m].split(), dtype=float).reshape(m, n1, n2)
    return U, idx, H1, H2, H12
