"""NLMC and enriched NLMC multiscale subspaces.

Both variants solve, per coarse block K_i and per auxiliary function, a local
constrained energy minimization on the oversampled region K_i+:

    minimize a(psi, psi) over psi vanishing on the interior part of the
    boundary of K_i+, subject to moment conditions s_S(psi, phi) = target
    for every auxiliary function phi of every block inside K_i+.

The moment of psi against an auxiliary function phi supported on the cell set
S is ``phi^T M_S psi`` with M_S the unit mass matrix restricted to S.  For
NLMC, phi is the indicator of a fracture component or of the matrix part of a
block, so the moment is the plain integral of psi over that set.  The domain
boundary carries the natural (zero-flux) condition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import fem
from .errors import ConfigurationError, SingularSystemError
from .mesh import MeshHierarchy, oversample_region

log = logging.getLogger(__name__)


@dataclass
class ContinuumPartition:
    """Fracture components and matrix complement of every coarse block."""

    threshold: float
    fracture_cells: np.ndarray  # bool per fine cell
    fractures: list  # per block: list of cell-index arrays, one per component
    matrix: list  # per block: cell-index array (possibly empty)

    def m(self, block: int) -> int:
        return len(self.fractures[block])

    @property
    def n_fracture_continua(self) -> int:
        return sum(len(f) for f in self.fractures)


def partition_continua(field, mesh: MeshHierarchy, threshold=None) -> ContinuumPartition:
    """Split each block into 4-connected fracture components and the matrix rest.

    The default threshold is the geometric mean of the extreme field values; a
    uniform field then has no fractures at all.
    """
    v = field.values
    lo, hi = float(v.min()), float(v.max())
    if threshold is None:
        threshold = np.sqrt(lo * hi) if hi > lo else np.inf
    elif not lo < threshold < hi:
        raise ConfigurationError(f"threshold {threshold} not strictly inside field range ({lo}, {hi})")
    frac = v >= threshold
    grid = frac.reshape(mesh.ny, mesh.nx)
    bx, by = mesh.block_shape
    Nx, Ny = mesh.coarse_blocks
    fractures, matrix = [], []
    for J in range(Ny):
        for I in range(Nx):
            sub = grid[J * by:(J + 1) * by, I * bx:(I + 1) * bx]
            labels, count = ndimage.label(sub)  # default structure is 4-connectivity
            jj, ii = np.meshgrid(np.arange(J * by, (J + 1) * by), np.arange(I * bx, (I + 1) * bx),
                                 indexing="ij")
            cell_ids = jj * mesh.nx + ii
            fractures.append([np.sort(cell_ids[labels == k]) for k in range(1, count + 1)])
            matrix.append(np.sort(cell_ids[labels == 0]))
    return ContinuumPartition(float(threshold), frac, fractures, matrix)


@dataclass
class AuxFunction:
    """Auxiliary function: nodal values on the nodes of a cell set."""

    block: int
    continuum: str  # "f" or "m"
    index: int
    cells: np.ndarray
    nodes: np.ndarray
    values: np.ndarray
    eigenvalue: float = float("nan")


@dataclass
class AuxiliarySpace:
    block: int
    variant: str
    fracture: list = field(default_factory=list)
    matrix: list = field(default_factory=list)

    @property
    def functions(self):
        return self.fracture + self.matrix

    @property
    def counts(self):
        return len(self.fracture), len(self.matrix)


def nlmc_aux_space(partition: ContinuumPartition, block: int, mesh: MeshHierarchy) -> AuxiliarySpace:
    """Indicator functions of each fracture component and of the matrix part."""
    aux = AuxiliarySpace(block, "NLMC")
    for j, cells in enumerate(partition.fractures[block]):
        nodes = mesh.cells_nodes(cells)
        aux.fracture.append(AuxFunction(block, "f", j + 1, cells, nodes, np.ones(nodes.size)))
    cells = partition.matrix[block]
    if cells.size:
        nodes = mesh.cells_nodes(cells)
        aux.matrix.append(AuxFunction(block, "m", 0, cells, nodes, np.ones(nodes.size)))
    return aux


def _subset_operators(mesh, kappa0, cells):
    """Stiffness (coefficient kappa0) and unit mass restricted to a cell set, on its nodes."""
    mask = np.zeros(mesh.n_cells)
    mask[cells] = 1.0
    nodes = mesh.cells_nodes(cells)
    A = fem.assemble_stiffness(mesh, kappa0 * mask, check_positive=False)[nodes][:, nodes]
    asm = fem.assembler(mesh)
    M = asm.weighted(asm.M_loc, mask)[nodes][:, nodes]
    return nodes, A.toarray(), M.toarray()


def _spectral(mesh, kappa0, cells, count, what):
    if cells.size == 0:
        return np.zeros(0), np.zeros(0, dtype=int), np.zeros((0, 0))
    nodes, A, M = _subset_operators(mesh, np.asarray(kappa0, dtype=float), cells)
    if count > nodes.size:
        raise ConfigurationError(f"{what}: requested {count} eigenpairs, only {nodes.size} local dofs")
    if count == 0:
        return np.zeros(0), nodes, np.zeros((nodes.size, 0))
    lam, vec = sla.eigh(A, M, subset_by_index=[0, count - 1])
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[idx, np.arange(vec.shape[1])])
    return lam, nodes, vec


def _all_fracture_cells(partition, block):
    fr = partition.fractures[block]
    return np.sort(np.concatenate(fr)) if fr else np.zeros(0, dtype=int)


def spectral_fracture(mesh, partition, kappa0, block, count):
    """Lowest generalized eigenpairs of (kappa0 grad, grad) = lam (., .) on K_{i,f}.

    Returns ``(eigenvalues, nodes, eigenvectors)``; eigenvectors are
    orthonormal in the mass restricted to the fracture cells.
    """
    return _spectral(mesh, kappa0, _all_fracture_cells(partition, block), count,
                     f"block {block} fracture spectral problem")


def spectral_matrix(mesh, partition, kappa0, block, count):
    """As :func:`spectral_fracture` over the matrix part K_{i,m}."""
    return _spectral(mesh, kappa0, partition.matrix[block], count,
                     f"block {block} matrix spectral problem")


def enlmc_aux_space(mesh, partition, kappa0, block, counts) -> AuxiliarySpace:
    l1, l2 = counts
    aux = AuxiliarySpace(block, "ENLMC")
    fcells = _all_fracture_cells(partition, block)
    if fcells.size:
        lam, nodes, vec = spectral_fracture(mesh, partition, kappa0, block, l1)
        for k in range(vec.shape[1]):
            aux.fracture.append(AuxFunction(block, "f", k + 1, fcells, nodes, vec[:, k], lam[k]))
    mcells = partition.matrix[block]
    if mcells.size:
        lam, nodes, vec = spectral_matrix(mesh, partition, kappa0, block, l2)
        for k in range(vec.shape[1]):
            aux.matrix.append(AuxFunction(block, "m", k + 1, mcells, nodes, vec[:, k], lam[k]))
    return aux


def moment_vector(mesh: MeshHierarchy, aux: AuxFunction) -> np.ndarray:
    """Global vector w with w @ psi = integral over aux.cells of psi * aux."""
    asm = fem.assembler(mesh)
    cn = mesh.cell_nodes[aux.cells]
    full = np.zeros(mesh.n_nodes)
    full[aux.nodes] = aux.values
    loc = full[cn] @ asm.M_loc  # M_loc symmetric
    return np.bincount(cn.ravel(), weights=loc.ravel(), minlength=mesh.n_nodes)


@dataclass
class MultiscaleBasis:
    """Columns spanning V_H1 (fracture/high-contrast) and V_H2 (matrix)."""

    psi1: sp.csc_matrix
    psi2: sp.csc_matrix
    tags1: list
    tags2: list
    variant: str
    layers: int
    constraint_residual: float = 0.0

    @property
    def n1(self) -> int:
        return self.psi1.shape[1]

    @property
    def n2(self) -> int:
        return self.psi2.shape[1]

    @property
    def psi(self) -> sp.csc_matrix:
        return sp.hstack([self.psi1, self.psi2]).tocsc()

    @property
    def n_fine(self) -> int:
        return self.psi1.shape[0]

    def dense_operands(self):
        """(P1, P2) as the representation fastest for triple products (cached)."""
        cache = self.__dict__.get("_operands")
        if cache is None:
            cache = (_operand(self.psi1), _operand(self.psi2))
            object.__setattr__(self, "_operands", cache)
        return cache

    def dof_label(self) -> str:
        return f"{self.n1}/{self.n2}"


def dirichlet_free_nodes(mesh: MeshHierarchy, region, extra_fixed=()) -> np.ndarray:
    """Region nodes not touching any cell outside the region (and not in extra_fixed)."""
    cn = mesh.cell_nodes
    count_region = np.bincount(cn[region.cells].ravel(), minlength=mesh.n_nodes)
    count_mesh = np.bincount(cn.ravel(), minlength=mesh.n_nodes)
    nodes = region.nodes
    free = nodes[count_region[nodes] == count_mesh[nodes]]
    if len(extra_fixed):
        free = np.setdiff1d(free, np.asarray(extra_fixed, dtype=int))
    return free


def _local_solve(mesh, kappa0, region, W, targets, block, fixed_nodes=()):
    """Energy minimization on ``region`` with moment rows ``W`` (n_nodes x K).

    ``targets`` is K x ncols.  Returns global columns (n_nodes x ncols) and
    the largest absolute constraint residual.
    """
    free = dirichlet_free_nodes(mesh, region, fixed_nodes)
    mask = np.zeros(mesh.n_cells)
    mask[region.cells] = 1.0
    A = fem.assemble_stiffness(mesh, kappa0 * mask, check_positive=False)[free][:, free]
    K = W.shape[1]
    # equilibrate: energy rows by the coefficient scale, moment rows to unit norm
    a_scale = float(np.max(np.abs(A.diagonal()))) if free.size else 1.0
    w_scale = np.linalg.norm(W[free, :], axis=0)
    w_scale[w_scale == 0] = 1.0
    C = sp.csr_matrix(W[free, :] / w_scale)
    aug = sp.bmat([[A / a_scale, C], [C.T, None]], format="csc")
    rhs = np.vstack([np.zeros((free.size, targets.shape[1])), targets / w_scale[:, None]])
    try:
        lu = spla.splu(aug)
        sol = lu.solve(rhs)
        for _ in range(2):
            sol += lu.solve(rhs - aug @ sol)
    except RuntimeError as exc:
        raise SingularSystemError(f"singular local saddle-point system on block {block}: {exc}",
                                  block=block) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError(f"non-finite local basis on block {block}", block=block)
    cols = np.zeros((mesh.n_nodes, targets.shape[1]))
    cols[free] = sol[:free.size]
    resid = float(np.max(np.abs(W.T @ cols - targets))) if K else 0.0
    if resid > 1e-8 * max(1.0, float(np.max(np.abs(targets)))):
        raise SingularSystemError(
            f"constraint residual {resid:.2e} on block {block}: degenerate constraint set", block=block)
    return cols, resid


def _assemble_basis(mesh, kappa0, aux_spaces, layers, variant, targets_for, fixed_nodes):
    kappa0 = np.asarray(kappa0, dtype=float)
    if np.any(kappa0 <= 0):
        raise ConfigurationError("kappa0 must be positive")
    moments = {}
    for aux in aux_spaces:
        for f in aux.functions:
            moments[(f.block, f.continuum, f.index)] = moment_vector(mesh, f)
    cols1, cols2, tags1, tags2 = [], [], [], []
    worst = 0.0
    for i, aux in enumerate(aux_spaces):
        if not aux.functions:
            continue
        region = oversample_region(mesh, i, layers)
        keys = [(f.block, f.continuum, f.index)
                for b in region.blocks for f in aux_spaces[b].functions]
        W = np.column_stack([moments[k] for k in keys])
        own = [(f.block, f.continuum, f.index) for f in aux.functions]
        targets = targets_for(aux, keys, own, moments)
        cols, resid = _local_solve(mesh, kappa0, region, W, targets, i, fixed_nodes)
        worst = max(worst, resid)
        for c, (b, cont, idx) in enumerate(own):
            col = sp.csc_matrix(cols[:, c:c + 1])
            if cont == "f":
                cols1.append(col)
                tags1.append((b, cont, idx))
            else:
                cols2.append(col)
                tags2.append((b, cont, idx))
    n = mesh.n_nodes
    psi1 = sp.hstack(cols1).tocsc() if cols1 else sp.csc_matrix((n, 0))
    psi2 = sp.hstack(cols2).tocsc() if cols2 else sp.csc_matrix((n, 0))
    for P in (psi1, psi2):
        P.eliminate_zeros()
    log.info("%s basis: %d/%d columns, layers=%d, max constraint residual %.2e",
             variant, psi1.shape[1], psi2.shape[1], layers, worst)
    return MultiscaleBasis(psi1, psi2, tags1, tags2, variant, layers, worst)


def build_nlmc_basis(mesh, partition, kappa0, layers: int = 2, fixed_nodes=()) -> MultiscaleBasis:
    """One column per continuum: integral 1 over its own continuum, 0 over all others in K_i+."""
    aux_spaces = [nlmc_aux_space(partition, i, mesh) for i in range(mesh.n_blocks)]

    def targets_for(aux, keys, own, moments):
        T = np.zeros((len(keys), len(own)))
        for c, k in enumerate(own):
            T[keys.index(k), c] = 1.0
        return T

    return _assemble_basis(mesh, kappa0, aux_spaces, layers, "NLMC", targets_for, fixed_nodes)


def build_enlmc_basis(mesh, partition, kappa0, counts=(2, 2), layers: int = 2,
                      auxiliary: str = "spectral", fixed_nodes=()) -> MultiscaleBasis:
    """Enriched basis from local spectral auxiliary functions.

    Each column matches the s-moments of its own auxiliary function against
    the auxiliary functions of its block and annihilates the moments of every
    other auxiliary function in K_i+.  ``auxiliary="indicator"`` substitutes
    the NLMC indicators (counts ignored).
    """
    l1, l2 = counts
    if l1 < 0 or l2 < 0:
        raise ConfigurationError("ENLMC counts must be non-negative")
    if auxiliary == "spectral":
        aux_spaces = [enlmc_aux_space(mesh, partition, kappa0, i, counts) for i in range(mesh.n_blocks)]
    elif auxiliary == "indicator":
        aux_spaces = [nlmc_aux_space(partition, i, mesh) for i in range(mesh.n_blocks)]
    else:
        raise ConfigurationError(f"unknown auxiliary kind {auxiliary!r}")

    def targets_for(aux, keys, own, moments):
        T = np.zeros((len(keys), len(own)))
        own_set = {(f.block, f.continuum): [] for f in aux.functions}
        for f in aux.functions:
            own_set[(f.block, f.continuum)].append(f)
        for c, f in enumerate(aux.functions):
            # s(phi_own, eta) for eta of the same block and continuum, zero elsewhere
            full = np.zeros(mesh.n_nodes)
            full[f.nodes] = f.values
            for g in own_set[(f.block, f.continuum)]:
                T[keys.index((g.block, g.continuum, g.index)), c] = moments[(g.block, g.continuum, g.index)] @ full
        return T

    return _assemble_basis(mesh, kappa0, aux_spaces, layers, "ENLMC", targets_for, fixed_nodes)


@dataclass
class CoarseOperators:
    M11: np.ndarray
    M22: np.ndarray
    M12: np.ndarray
    A11: np.ndarray
    A22: np.ndarray
    A12: np.ndarray
    f1: np.ndarray
    f2: np.ndarray

    @property
    def M(self) -> np.ndarray:
        return np.block([[self.M11, self.M12], [self.M12.T, self.M22]])

    @property
    def A(self) -> np.ndarray:
        return np.block([[self.A11, self.A12], [self.A12.T, self.A22]])


def _operand(P):
    # near-dense columns multiply faster as dense arrays
    if sp.issparse(P) and P.nnz > 0.05 * P.shape[0] * max(P.shape[1], 1):
        return P.toarray()
    return P


def project_pair(basis: MultiscaleBasis, op):
    """Blocks (P1^T op P1, P2^T op P2, P1^T op P2) as dense arrays."""
    P1, P2 = basis.dense_operands()
    opP1 = op @ P1
    opP2 = op @ P2
    dense = lambda X: X.toarray() if sp.issparse(X) else np.asarray(X)
    return dense(P1.T @ opP1), dense(P2.T @ opP2), dense(P1.T @ opP2)


def coarse_operators(basis: MultiscaleBasis, M, A, f) -> CoarseOperators:
    n = basis.n_fine
    if M.shape != (n, n) or A.shape != (n, n) or np.asarray(f).shape != (n,):
        raise ConfigurationError("operator dimensions do not match the basis")
    M11, M22, M12 = project_pair(basis, M)
    A11, A22, A12 = project_pair(basis, A)
    f = np.asarray(f, dtype=float)
    return CoarseOperators(M11, M22, M12, A11, A22, A12, basis.psi1.T @ f, basis.psi2.T @ f)


def prolongate(basis: MultiscaleBasis, c1, c2) -> np.ndarray:
    return basis.psi1 @ np.asarray(c1, dtype=float) + basis.psi2 @ np.asarray(c2, dtype=float)


def restrict(basis: MultiscaleBasis, u, M=None):
    """Coefficients of the best approximation of u (Euclidean, or M-weighted if given)."""
    P = basis.psi
    G = (P.T @ P) if M is None else (P.T @ (M @ P))
    b = P.T @ u if M is None else P.T @ (M @ u)
    G = G.toarray() if sp.issparse(G) else G
    c = np.linalg.solve(G, b)
    return c[:basis.n1], c[basis.n1:]
