"""Independent reference computations used to cross-check the production code.

Everything here is written the slow, direct way: symbolic integration, dense
loops over cells, breadth-first flood fill, dense KKT solves and a
straight-line transcription of the split time stepping in fine coordinates.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np
import scipy.linalg as sla
import sympy


def symbolic_element_matrices(hx, hy):
    """Exact Q1 mass and stiffness on [0, hx] x [0, hy] by symbolic integration."""
    x, y = sympy.symbols("x y")
    hx_, hy_ = sympy.nsimplify(hx), sympy.nsimplify(hy)
    N = [(1 - x / hx_) * (1 - y / hy_), (x / hx_) * (1 - y / hy_),
         (x / hx_) * (y / hy_), (1 - x / hx_) * (y / hy_)]
    M = np.zeros((4, 4))
    K = np.zeros((4, 4))
    for a in range(4):
        for b in range(4):
            M[a, b] = float(sympy.integrate(N[a] * N[b], (x, 0, hx_), (y, 0, hy_)))
            g = sympy.diff(N[a], x) * sympy.diff(N[b], x) + sympy.diff(N[a], y) * sympy.diff(N[b], y)
            K[a, b] = float(sympy.integrate(g, (x, 0, hx_), (y, 0, hy_)))
    return M, K


def dense_assemble(mesh, cell_values, kind="stiffness"):
    """Dense global matrix by an explicit loop over cells."""
    Me, Ke = symbolic_element_matrices(mesh.hx, mesh.hy)
    loc = Ke if kind == "stiffness" else Me
    n = mesh.n_nodes
    G = np.zeros((n, n))
    vals = np.broadcast_to(np.asarray(cell_values, dtype=float), (mesh.n_cells,))
    for j in range(mesh.ny):
        for i in range(mesh.nx):
            c = j * mesh.nx + i
            ll = j * (mesh.nx + 1) + i
            nodes = [ll, ll + 1, ll + mesh.nx + 2, ll + mesh.nx + 1]
            for a in range(4):
                for b in range(4):
                    G[nodes[a], nodes[b]] += vals[c] * loc[a, b]
    return G


def flood_fill_components(mask):
    """4-connected components of a boolean 2-D array as a list of sorted (row, col) lists."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    rows, cols = mask.shape
    for r in range(rows):
        for c in range(cols):
            if mask[r, c] and not seen[r, c]:
                comp, queue = [], deque([(r, c)])
                seen[r, c] = True
                while queue:
                    a, b = queue.popleft()
                    comp.append((a, b))
                    for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        p, q = a + da, b + db
                        if 0 <= p < rows and 0 <= q < cols and mask[p, q] and not seen[p, q]:
                            seen[p, q] = True
                            queue.append((p, q))
                comps.append(sorted(comp))
    return comps


def dense_deim_greedy(U):
    """Greedy DEIM indices, recomputing each interpolant from scratch with a dense solve."""
    U = np.asarray(U, dtype=float)
    idx = []
    for i in range(U.shape[1]):
        if i == 0:
            r = U[:, 0]
        else:
            P = np.zeros((U.shape[0], i))
            P[idx, range(i)] = 1.0
            c = np.linalg.solve(P.T @ U[:, :i], P.T @ U[:, i])
            r = U[:, i] - U[:, :i] @ c
        mags = np.abs(r)
        best = mags.max()
        idx.append(int(min(k for k in range(len(mags)) if mags[k] == best)))
    return idx


def dense_deim_approximation(U, idx, f):
    P = np.zeros((U.shape[0], len(idx)))
    P[idx, range(len(idx))] = 1.0
    return U @ np.linalg.solve(P.T @ U, P.T @ f)


def principal_cosine(P1, P2, M):
    """Largest cosine between two subspaces in the M inner product via principal angles."""
    L = np.linalg.cholesky(np.asarray(M, dtype=float))
    angles = sla.subspace_angles(L.T @ np.asarray(P1, dtype=float), L.T @ np.asarray(P2, dtype=float))
    return float(np.cos(np.min(angles)))


def dense_constrained_minimizer(A, C, targets, free):
    """argmin x^T A x subject to C^T x = targets with x zero outside ``free``, by a dense KKT solve."""
    A = np.asarray(A, dtype=float)[np.ix_(free, free)]
    C = np.asarray(C, dtype=float)[free, :]
    k = C.shape[1]
    K = np.block([[A, C], [C.T, np.zeros((k, k))]])
    rhs = np.concatenate([np.zeros(len(free)), targets])
    sol = np.linalg.solve(K, rhs)
    return sol[: len(free)]


def cell_coefficient(mesh, field_values, law, u):
    v = np.asarray(u, dtype=float)
    avg = np.array([
        (v[j * (mesh.nx + 1) + i] + v[j * (mesh.nx + 1) + i + 1]
         + v[(j + 1) * (mesh.nx + 1) + i + 1] + v[(j + 1) * (mesh.nx + 1) + i]) / 4
        for j in range(mesh.ny) for i in range(mesh.nx)
    ])
    return np.asarray(field_values) * law.evaluate(avg)


def dense_ein_trajectory(mesh, field_values, law, kappa0, P1, P2, F, u0, dt, steps, form="analysis"):
    """Straight-line EIN splitting in dense fine-space algebra.

    Each step solves both sub-equations with fresh dense solves; the nonlinear
    stiffness is assembled densely from scratch.  Returns the list of fine states.
    """
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    Mf = dense_assemble(mesh, 1.0, "mass")
    A0 = dense_assemble(mesh, kappa0)
    P = np.hstack([P1, P2])
    c = np.linalg.solve(P.T @ Mf @ P, P.T @ Mf @ u0)
    n1 = P1.shape[1]
    c1, c2 = c[:n1], c[n1:]
    c1_old, c2_old = c1.copy(), c2.copy()
    states = [P1 @ c1 + P2 @ c2]
    for _ in range(steps):
        u = P1 @ c1 + P2 @ c2
        An = dense_assemble(mesh, cell_coefficient(mesh, field_values, law, u))
        # first subspace: implicit in u1, explicit in u2
        lhs1 = P1.T @ (Mf / dt + A0) @ P1
        rhs1 = (P1.T @ Mf @ (P1 @ c1) / dt
                - P1.T @ Mf @ (P2 @ (c2 - c2_old)) / dt
                - P1.T @ A0 @ (P2 @ c2)
                - P1.T @ (An - A0) @ u
                + P1.T @ F)
        c1_new = np.linalg.solve(lhs1, rhs1)
        lhs2 = P2.T @ Mf @ P2 / dt
        if form == "analysis":
            rhs2 = (P2.T @ Mf @ (P2 @ c2) / dt
                    - P2.T @ Mf @ (P1 @ (c1 - c1_old)) / dt
                    - P2.T @ A0 @ (P1 @ c1_new + P2 @ c2)
                    - P2.T @ (An - A0) @ u
                    + P2.T @ F)
        else:
            rhs2 = (P2.T @ Mf @ (P2 @ c2) / dt
                    - P2.T @ Mf @ (P1 @ (c1 - c1_old)) / dt
                    - P2.T @ A0 @ (P1 @ c1 + P2 @ c2)
                    - P2.T @ An @ u
                    + P2.T @ A0 @ (P1 @ c1_new + P2 @ c2)
                    + P2.T @ F)
        c2_new = np.linalg.solve(lhs2, rhs2)
        c1_old, c2_old, c1, c2 = c1, c2, c1_new, c2_new
        states.append(P1 @ c1 + P2 @ c2)
    return states


# -- printable cases for the command line -------------------------------------------------------

def _case_element():
    M, K = symbolic_element_matrices(0.5, 0.25)
    return {"mass_diag": M[0, 0], "mass_sum": M.sum(), "stiff_diag": K[0, 0], "stiff_row_sum": K.sum(axis=1).max()}


def _case_pod_fraction():
    s = np.array([3.0, 2.0, 1.0])
    frac = np.cumsum(s) / s.sum()
    return {"fractions": frac.tolist(), "modes_for_0.92": int(np.searchsorted(frac, 0.92) + 1)}


def _case_c1_exp():
    return {"c1(beta=1, u~=0, samples in [0,0.1])": math.exp(0.1) - 1}


def _case_deim():
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.standard_normal((8, 3)))
    return {"indices": dense_deim_greedy(U)}


def _case_gamma():
    rng = np.random.default_rng(1)
    P1 = rng.standard_normal((6, 2))
    P2 = rng.standard_normal((6, 2))
    B = rng.standard_normal((6, 6))
    M = B @ B.T + 6 * np.eye(6)
    return {"gamma": principal_cosine(P1, P2, M)}


def _case_flood_fill():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, :] = True
    mask[:, 2] = True
    mask[0, 4] = True
    return {"components": len(flood_fill_components(mask)),
            "sizes": [len(c) for c in flood_fill_components(mask)]}


def _case_cfl_scalar():
    return {"lambda_max(a=3, m=0.5)": 3 / 0.5}


CASES = {
    "element": _case_element,
    "pod-fraction": _case_pod_fraction,
    "c1-exp": _case_c1_exp,
    "deim-greedy": _case_deim,
    "gamma": _case_gamma,
    "flood-fill": _case_flood_fill,
    "cfl-scalar": _case_cfl_scalar,
}
