"""Bilinear (Q1) finite element operators on the fine grid.

Element matrices are integrated with 2x2 Gauss quadrature, which is exact for
products of bilinear functions and their gradients on rectangles.  All
assemblies share one fixed CSR sparsity pattern per mesh, so a state-dependent
stiffness matrix costs one weighted bincount.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError
from .mesh import MeshHierarchy

_REF_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_GAUSS = 1.0 / np.sqrt(3.0)


def element_matrices(hx: float, hy: float):
    """Return ``(mass, stiffness)`` 4x4 element matrices for an hx-by-hy cell."""
    M = np.zeros((4, 4))
    K = np.zeros((4, 4))
    jac = hx * hy / 4.0
    for xi in (-_GAUSS, _GAUSS):
        for eta in (-_GAUSS, _GAUSS):
            N = 0.25 * (1 + _REF_NODES[:, 0] * xi) * (1 + _REF_NODES[:, 1] * eta)
            dNx = 0.25 * _REF_NODES[:, 0] * (1 + _REF_NODES[:, 1] * eta) * (2.0 / hx)
            dNy = 0.25 * _REF_NODES[:, 1] * (1 + _REF_NODES[:, 0] * xi) * (2.0 / hy)
            M += np.outer(N, N) * jac
            K += (np.outer(dNx, dNx) + np.outer(dNy, dNy)) * jac
    return M, K


class Q1Assembler:
    """Precomputed sparsity pattern and element matrices for one mesh."""

    def __init__(self, mesh: MeshHierarchy):
        self.mesh = mesh
        self.M_loc, self.K_loc = element_matrices(mesh.hx, mesh.hy)
        cn = mesh.cell_nodes
        n = mesh.n_nodes
        rows = np.repeat(cn, 4, axis=1).ravel()
        cols = np.tile(cn, (1, 4)).ravel()
        keys = rows.astype(np.int64) * n + cols
        uniq, self.pos = np.unique(keys, return_inverse=True)
        self.nnz = uniq.size
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n, np.arange(n + 1)).astype(np.int32)

    def assemble(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum per-cell 4x4 blocks (shape ``(n_cells, 4, 4)``) into a CSR matrix."""
        data = np.bincount(self.pos, weights=local.reshape(-1), minlength=self.nnz)
        n = self.mesh.n_nodes
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(n, n))

    def weighted(self, local4x4: np.ndarray, weight: np.ndarray) -> sp.csr_matrix:
        w = np.broadcast_to(np.asarray(weight, dtype=float), (self.mesh.n_cells,))
        return self.assemble(w[:, None, None] * local4x4[None, :, :])

    def apply_stiffness(self, coefficient, u) -> np.ndarray:
        """``A(coefficient) @ u`` without forming the matrix."""
        cn = self.mesh.cell_nodes
        loc = (u[cn] @ self.K_loc.T) * np.asarray(coefficient, dtype=float)[:, None]
        return np.bincount(cn.ravel(), weights=loc.ravel(), minlength=self.mesh.n_nodes)


@lru_cache(maxsize=32)
def assembler(mesh: MeshHierarchy) -> Q1Assembler:
    return Q1Assembler(mesh)


def _cell_array(mesh, values, what):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_cells, float(arr))
    if arr.shape != (mesh.n_cells,):
        raise ConfigurationError(f"{what} has {arr.size} entries, mesh has {mesh.n_cells} cells")
    return arr


def assemble_mass(mesh: MeshHierarchy, weight=1.0) -> sp.csr_matrix:
    w = _cell_array(mesh, weight, "mass weight")
    if np.any(w <= 0):
        raise ConfigurationError("mass weight must be positive on every cell")
    asm = assembler(mesh)
    return asm.weighted(asm.M_loc, w)


def assemble_stiffness(mesh: MeshHierarchy, coefficient, check_positive: bool = True) -> sp.csr_matrix:
    """Stiffness matrix with a per-cell coefficient.

    ``check_positive=False`` admits signed coefficients (POD modes).
    """
    k = _cell_array(mesh, coefficient, "coefficient")
    if check_positive and np.any(k <= 0):
        raise ConfigurationError("stiffness coefficient must be positive on every cell")
    asm = assembler(mesh)
    return asm.weighted(asm.K_loc, k)


def cell_average(mesh: MeshHierarchy, u) -> np.ndarray:
    return np.asarray(u, dtype=float)[mesh.cell_nodes].mean(axis=1)


def nonlinear_coefficient(mesh: MeshHierarchy, field, law, u) -> np.ndarray:
    """kappa_x(cell) * kappa_u(mean of the cell's four nodal values)."""
    ku = law.evaluate(cell_average(mesh, u))
    if not np.all(np.isfinite(ku)):
        raise NumericalError("non-finite kappa_u in nonlinear assembly")
    return field.values * ku


def assemble_nonlinear_stiffness(mesh, field, law, u) -> sp.csr_matrix:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ConfigurationError("state vector does not match node count")
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite state in nonlinear assembly")
    return assemble_stiffness(mesh, nonlinear_coefficient(mesh, field, law, u))


def assemble_chain_term(mesh, field, law, u) -> sp.csr_matrix:
    """Derivative of ``A(kappa(u)) u`` with respect to u through kappa_u.

    Entry (i, j) sums, over cells containing node j, kappa_x * kappa_u'(avg u)
    / 4 * (K_cell u_cell)_i.  Not symmetric in general.
    """
    asm = assembler(mesh)
    cn = mesh.cell_nodes
    g = field.values * law.derivative(cell_average(mesh, u)) / 4.0
    Ku = u[cn] @ asm.K_loc.T
    local = (g[:, None] * Ku)[:, :, None] * np.ones((1, 1, 4))
    return asm.assemble(local)


def apply_dirichlet(op, rhs, nodes, values):
    """Symmetric elimination of prescribed nodes.

    Returns ``(A, b)`` where the rows and columns of ``nodes`` are replaced
    by identity and the known values are lifted into the right-hand side.
    """
    nodes = np.asarray(nodes, dtype=int)
    b = np.array(rhs, dtype=float)
    if nodes.size == 0:
        return op, b
    A = sp.csr_matrix(op)
    g = np.zeros(A.shape[0])
    g[nodes] = values
    b -= A @ g
    keep = np.ones(A.shape[0])
    keep[nodes] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D + sp.diags(1.0 - keep)).tocsr()
    b[nodes] = g[nodes]
    return A, b


def dirichlet_rows_zero(vec, nodes):
    out = np.array(vec, dtype=float)
    out[np.asarray(nodes, dtype=int)] = 0.0
    return out


def _residual_ok(A, x, b, rtol):
    r = A @ x - b
    nb = np.linalg.norm(b)
    return np.linalg.norm(r) <= rtol * (nb if nb > 0 else 1.0), np.linalg.norm(r)


def solve_spd(A, b, rtol: float = 1e-10) -> np.ndarray:
    """Direct solve of a symmetric positive definite system.

    Raises NumericalError if the factorization breaks down or the relative
    residual exceeds ``rtol``.
    """
    b = np.asarray(b, dtype=float)
    if sp.issparse(A):
        if A.shape[0] != b.shape[0]:
            raise ConfigurationError("matrix and right-hand side dimensions differ")
        try:
            x = spla.splu(sp.csc_matrix(A)).solve(b)
        except RuntimeError as exc:
            raise NumericalError(f"sparse factorization failed: {exc}") from exc
    else:
        A = np.asarray(A, dtype=float)
        try:
            x = sla.cho_solve(sla.cho_factor(A), b)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Cholesky breakdown: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError("solve produced non-finite values")
    ok, rn = _residual_ok(A, x, b, rtol)
    if not ok:
        raise NumericalError(f"residual {rn:.3e} above tolerance after direct solve")
    return x


def factorize(A):
    """Return a reusable solve callable for a fixed matrix (sparse LU or dense LU)."""
    if sp.issparse(A):
        lu = spla.splu(sp.csc_matrix(A))
        return lu.solve
    lu = sla.lu_factor(np.asarray(A, dtype=float))
    return lambda b: sla.lu_solve(lu, b)


def l2_norm(M, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def energy_norm(A, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (A @ v), 0.0)))
