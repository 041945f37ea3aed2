"""Time-step admissibility for the explicit second subspace.

The split scheme is stable when

    ||v2||_kappa0^2 / ||v2||^2 <= (1 - gamma)(1 - C1) / dt   for all v2 in V_H2,

with gamma the L2 cosine between the two subspaces and C1 the relative
deviation of kappa_u along the run from its frozen value.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla

from . import fem
from .errors import ConfigurationError, NumericalError


@dataclass(frozen=True)
class StabilityReport:
    gamma: float
    c1: float
    lambda_max: float
    dt_max: float
    dt_max_strict: float  # factor-2 tighter threshold used by the error estimates
    contrast: float
    dt: float = float("nan")
    passed: bool = False
    passed_strict: bool = False
    degenerate: bool = False

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def as_row(self) -> dict:
        return asdict(self) | {"verdict": self.verdict}


def subspace_gamma(M, basis_or_psi1, psi2=None):
    """Largest cosine between span(P1) and span(P2) in the M inner product.

    Returns ``(gamma, degenerate)``; ``degenerate`` is True when the subspaces
    share a direction (gamma within 1e-10 of 1).
    """
    if psi2 is None:
        P1, P2 = basis_or_psi1.psi1, basis_or_psi1.psi2
    else:
        P1, P2 = basis_or_psi1, psi2
    dense = lambda X: X.toarray() if hasattr(X, "toarray") else np.asarray(X, dtype=float)
    if P1.shape[1] == 0 or P2.shape[1] == 0:
        return 0.0, False
    M11 = dense(P1.T @ (M @ P1))
    M22 = dense(P2.T @ (M @ P2))
    M12 = dense(P1.T @ (M @ P2))
    return gamma_from_blocks(M11, M22, M12)


def gamma_from_blocks(M11, M22, M12):
    try:
        L1 = sla.cholesky(M11, lower=True)
        L2 = sla.cholesky(M22, lower=True)
    except sla.LinAlgError as exc:
        raise NumericalError(f"Gram block is not positive definite: {exc}") from exc
    X = sla.solve_triangular(L1, M12, lower=True)
    X = sla.solve_triangular(L2, X.T, lower=True).T
    g = float(np.linalg.svd(X, compute_uv=False)[0]) if X.size else 0.0
    degenerate = g >= 1.0 - 1e-10
    return min(g, 1.0), degenerate


def estimate_c1(law, u_tilde, samples, reading: str = "max") -> float:
    """Relative deviation of kappa_u over the samples from kappa_u(u_tilde).

    ``reading="max"`` takes the largest absolute deviation (the bound the
    energy argument needs); ``reading="min"`` takes the smallest signed one.
    ``u_tilde`` may be a scalar or an array matching each sample row.
    """
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ConfigurationError("C1 needs at least one sample")
    if not np.all(np.isfinite(s)):
        raise NumericalError("non-finite sample in C1 estimate")
    k0 = law.evaluate(np.broadcast_to(np.asarray(u_tilde, dtype=float), s.shape))
    dev = (law.evaluate(s) - k0) / k0
    if reading == "max":
        return float(np.max(np.abs(dev)))
    if reading == "min":
        return float(np.min(dev))
    raise ConfigurationError(f"unknown C1 reading {reading!r}")


def cfl_bound(A22, M22) -> float:
    """Largest eigenvalue of the pencil (A22, M22)."""
    A22 = np.asarray(A22, dtype=float)
    M22 = np.asarray(M22, dtype=float)
    if A22.size == 0:
        return 0.0
    if not np.any(A22):
        return 0.0
    try:
        lam = sla.eigh(A22, M22, eigvals_only=True, subset_by_index=[A22.shape[0] - 1, A22.shape[0] - 1])
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"generalized eigensolve failed: {exc}") from exc
    return max(float(lam[-1]), 0.0)


def admissible_dt(gamma, c1, lambda_max, factor: float = 1.0) -> float:
    if c1 >= 1 or gamma >= 1:
        return 0.0
    if lambda_max <= 0:
        return math.inf
    return (1 - gamma) * (1 - c1) / (factor * lambda_max)


def check(gamma, c1, lambda_max, dt, contrast=float("nan"), degenerate=False) -> StabilityReport:
    dt_max = admissible_dt(gamma, c1, lambda_max)
    dt_strict = admissible_dt(gamma, c1, lambda_max, 2.0)
    ok = c1 < 1 and not degenerate and lambda_max * dt <= (1 - gamma) * (1 - c1)
    ok_strict = c1 < 1 and not degenerate and 2 * lambda_max * dt <= (1 - gamma) * (1 - c1)
    return StabilityReport(float(gamma), float(c1), float(lambda_max), dt_max, dt_strict,
                           float(contrast), float(dt), bool(ok), bool(ok_strict), bool(degenerate))


def report_for(ops, law, u_tilde_cells, samples, dt, kappa0=None, reading="max") -> StabilityReport:
    """Assemble the report from coarse kappa0 operators and sampled cell averages."""
    gamma, degenerate = gamma_from_blocks(ops.M11, ops.M22, ops.M12) if ops.M11.size and ops.M22.size \
        else (0.0, False)
    c1 = estimate_c1(law, u_tilde_cells, samples, reading)
    lam = cfl_bound(ops.A22, ops.M22)
    contrast = float(np.max(kappa0) / np.min(kappa0)) if kappa0 is not None else float("nan")
    return check(gamma, c1, lam, dt, contrast, degenerate)


def split_energy(M, A_of, c_hist, basis, dt, gamma, offset: float = 0.0) -> np.ndarray:
    """Energy quantity of the stability estimate along a coarse trajectory.

    E^n = dt^-1 sum_i gamma/2 ||P_i (c_i^n - c_i^{n-1})||_M^2 + 1/2 (A(kappa(u^n)) u^n, u^n),
    with ``A_of(u)`` returning the stiffness matrix at state u.  The increment
    is zero at n = 0.  ``offset`` is a constant added to every prolongated state
    (the energy of a constant vanishes, only kappa sees it).
    """
    out = []
    prev = None
    for c1, c2 in c_hist:
        w = basis.psi1 @ c1 + basis.psi2 @ c2
        kin = 0.0
        if prev is not None:
            v1 = basis.psi1 @ (c1 - prev[0])
            v2 = basis.psi2 @ (c2 - prev[1])
            kin = gamma / 2 * (v1 @ (M @ v1) + v2 @ (M @ v2)) / dt
        out.append(kin + 0.5 * float(w @ (A_of(w + offset) @ w)))
        prev = (c1, c2)
    return np.array(out)


def growth_constant(spec, u_hist, kappa_u_min=None) -> float:
    """Empirical D = C_u' * C_0 / (2 sqrt(min kappa_u)).

    C_u' is the largest |kappa_u'| over the visited cell averages and C_0 the
    largest cell value of sqrt(kappa_x)|grad u| along the run.
    """
    mesh = spec.mesh
    law = spec.law
    du, c0, kmin = 0.0, 0.0, math.inf
    sq = np.sqrt(spec.field.values)
    for u in u_hist:
        avg = fem.cell_average(mesh, u)
        du = max(du, float(np.max(np.abs(law.derivative(avg)))))
        kmin = min(kmin, float(np.min(law.evaluate(avg))))
        c0 = max(c0, float(np.max(sq * cell_gradient_norm(mesh, u))))
    if kappa_u_min is not None:
        kmin = kappa_u_min
    return du * c0 / (2 * math.sqrt(kmin))


def cell_gradient_norm(mesh, u) -> np.ndarray:
    """Largest |grad u| over each cell's corners for a bilinear field."""
    v = np.asarray(u, dtype=float)[mesh.cell_nodes]
    gx_bot = (v[:, 1] - v[:, 0]) / mesh.hx
    gx_top = (v[:, 2] - v[:, 3]) / mesh.hx
    gy_left = (v[:, 3] - v[:, 0]) / mesh.hy
    gy_right = (v[:, 2] - v[:, 1]) / mesh.hy
    corners = np.stack([
        np.hypot(gx_bot, gy_left), np.hypot(gx_bot, gy_right),
        np.hypot(gx_top, gy_right), np.hypot(gx_top, gy_left),
    ])
    return corners.max(axis=0)


def gronwall_bound(E0, work, D, T, gamma) -> float:
    """exp(D^2 T / (2 (1 - gamma))) * (E^0 + work)."""
    return math.exp(D * D * T / (2 * (1 - gamma))) * (E0 + work)


def source_work(F, u_hist) -> float:
    """Largest cumulative source work (F, u^n - u^0) along the run (clipped at 0)."""
    u0 = u_hist[0]
    return max(0.0, max(float(F @ (u - u0)) for u in u_hist))
