"""Coarse time stepping on a two-subspace multiscale space.

Coarse coefficients are split as ``u_H = P1 c1 + P2 c2``.  The schemes are

* coarse implicit Euler with Newton in coarse coordinates,
* the linear partially explicit splitting with the frozen coefficient kappa0,
* the same splitting with kappa lagged at the previous step in both
  sub-equations (reassembled every step),
* the EIN splitting: kappa0 handled implicitly on the first subspace and
  explicitly on the second, with the nonlinear remainder
  ``a(u^n; u^n, .) - a0(u^n, .)`` always explicit, optionally assembled
  through DEIM.

Both sub-equations use lagged increments ``c^n - c^{n-1}`` of the other
subspace; those are zero at the first step.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import fem
from .deim import DeimModel, online_coefficients_from_cell_averages
from .errors import ConfigurationError, DivergenceError, NumericalError
from .fine_solver import FineOperators, NewtonConfig, Trajectory, run_reference
from .media import ProblemSpec
from .multiscale import _operand, CoarseOperators, MultiscaleBasis, coarse_operators, project_pair, restrict


class Scheme(str, Enum):
    FINE_REFERENCE = "fine_reference"
    COARSE_IMPLICIT_NEWTON = "coarse_implicit_newton"
    LINEAR_PARTIAL_EXPLICIT = "linear_partial_explicit"
    PARTIAL_EXPLICIT_LAGGED = "partial_explicit_lagged"
    EIN_SPLIT = "ein_split"
    EIN_SPLIT_DEIM = "ein_split_deim"


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme = Scheme.EIN_SPLIT
    ein_form: str = "analysis"  # or "as_printed"
    u_tilde: object = "initial_state"  # or a float
    dt: float | None = None  # None: use spec.dt
    newton: NewtonConfig = NewtonConfig()
    save_stride: int = 1
    use_deim: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.ein_form not in ("analysis", "as_printed"):
            raise ConfigurationError(f"unknown EIN form {self.ein_form!r}")
        if not (self.u_tilde == "initial_state" or isinstance(self.u_tilde, (int, float))):
            raise ConfigurationError(f"u_tilde must be 'initial_state' or a number, got {self.u_tilde!r}")
        if self.use_deim and self.scheme is not Scheme.EIN_SPLIT_DEIM:
            raise ConfigurationError("DEIM assembly is only available for the ein_split_deim scheme")
        if self.scheme is Scheme.EIN_SPLIT_DEIM and not self.use_deim:
            object.__setattr__(self, "use_deim", True)
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.save_stride < 1:
            raise ConfigurationError("save stride must be at least 1")


@dataclass
class SplitState:
    c1: np.ndarray
    c2: np.ndarray
    d1: np.ndarray  # c1^n - c1^{n-1}
    d2: np.ndarray
    n: int = 0

    @classmethod
    def cold(cls, c1, c2):
        c1 = np.array(c1, dtype=float)
        c2 = np.array(c2, dtype=float)
        return cls(c1, c2, np.zeros_like(c1), np.zeros_like(c2), 0)

    def advance(self, c1_new, c2_new) -> "SplitState":
        return SplitState(c1_new, c2_new, c1_new - self.c1, c2_new - self.c2, self.n + 1)


def kappa0_cells(spec: ProblemSpec, u_tilde="initial_state") -> np.ndarray:
    """Frozen coefficient kappa_x * kappa_u(u~) per fine cell."""
    if u_tilde == "initial_state":
        avg = fem.cell_average(spec.mesh, spec.initial_state())
    else:
        avg = np.full(spec.mesh.n_cells, float(u_tilde))
    return spec.field.values * spec.law.evaluate(avg)


def u_tilde_cells(spec: ProblemSpec, u_tilde="initial_state") -> np.ndarray:
    if u_tilde == "initial_state":
        return fem.cell_average(spec.mesh, spec.initial_state())
    return np.full(spec.mesh.n_cells, float(u_tilde))


class CoarseSystem:
    """Fine and coarse operators shared by all coarse schemes for one run."""

    def __init__(self, spec: ProblemSpec, basis: MultiscaleBasis, u_tilde="initial_state"):
        if basis.n_fine != spec.mesh.n_nodes:
            raise ConfigurationError("basis does not match the problem mesh")
        if spec.dirichlet is not None and np.any(np.asarray(spec.dirichlet[1], dtype=float) != 0):
            raise ConfigurationError("coarse schemes support homogeneous Dirichlet data only")
        self.spec = spec
        self.basis = basis
        self.fine = FineOperators(spec)
        self.kappa0 = kappa0_cells(spec, u_tilde)
        self.A0 = fem.assemble_stiffness(spec.mesh, self.kappa0)
        self.ops = coarse_operators(basis, self.fine.M, self.A0, self.fine.load(0.0))
        self.P1 = sp.csr_matrix(basis.psi1)
        self.P2 = sp.csr_matrix(basis.psi2)
        self.P1T = sp.csr_matrix(basis.psi1.T)
        self.P2T = sp.csr_matrix(basis.psi2.T)
        self.P = sp.csr_matrix(basis.psi)
        self.PT = sp.csr_matrix(basis.psi.T)
        self.P_op = _operand(basis.psi)
        # a constant initial state is carried as an exact offset: the localized spaces do not
        # contain constants, and zero-flux stiffness annihilates them anyway
        u0 = spec.initial_state()
        self.offset = float(u0[0]) if spec.dirichlet is None and np.ptp(u0) == 0 else 0.0

    def loads(self, t: float):
        if self.spec.source_fn is None:
            return self.ops.f1, self.ops.f2
        F = self.fine.load(t)
        return self.P1T @ F, self.P2T @ F

    def fine_state(self, c1, c2) -> np.ndarray:
        return self.P1 @ c1 + self.P2 @ c2 + self.offset

    def initial_state(self) -> SplitState:
        c1, c2 = restrict(self.basis, self.spec.initial_state() - self.offset, self.fine.M)
        return SplitState.cold(c1, c2)

    def remainder(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Coarse projections of (A(kappa(u)) - A(kappa0)) u, assembled matrix-free."""
        mesh = self.spec.mesh
        coef = fem.nonlinear_coefficient(mesh, self.spec.field, self.spec.law, u) - self.kappa0
        w = self.fine.asm.apply_stiffness(coef, u - self.offset)
        return self.P1T @ w, self.P2T @ w

    def nonlinear_action(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Coarse projections of A(kappa(u)) u."""
        mesh = self.spec.mesh
        coef = fem.nonlinear_coefficient(mesh, self.spec.field, self.spec.law, u)
        w = self.fine.asm.apply_stiffness(coef, u - self.offset)
        return self.P1T @ w, self.P2T @ w


class SplitFactors:
    """Factorizations reused at every step: the implicit first-subspace
    matrix and the second-subspace mass matrix."""

    def __init__(self, ops: CoarseOperators, dt: float):
        self.dt = dt
        self.M11 = ops.M11
        n1, n2 = ops.M11.shape[0], ops.M22.shape[0]
        self.implicit = sla.lu_factor(ops.M11 / dt + ops.A11) if n1 else None
        self.mass2 = sla.cho_factor(ops.M22) if n2 else None

    def solve1(self, b):
        return sla.lu_solve(self.implicit, b) if self.implicit is not None else b[:0].copy()

    def solve2(self, b):
        return sla.cho_solve(self.mass2, b) if self.mass2 is not None else b[:0].copy()


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite coarse state")


def step_linear_partial_explicit(ops: CoarseOperators, state: SplitState, dt: float, loads,
                                 factors: SplitFactors | None = None) -> SplitState:
    """One step of the linear partially explicit splitting with the frozen coefficient."""
    return _split_step(ops, state, dt, loads, None, factors, "analysis")


def _split_step(ops, state, dt, loads, remainder, factors, form, nonlinear=None):
    with np.errstate(over="ignore", invalid="ignore"):
        return _split_step_inner(ops, state, dt, loads, remainder, factors, form, nonlinear)


def _split_step_inner(ops, state, dt, loads, remainder, factors, form, nonlinear):
    f1, f2 = loads
    fac = factors if factors is not None else SplitFactors(ops, dt)
    c1, c2, d1, d2 = state.c1, state.c2, state.d1, state.d2
    r1, r2 = remainder if remainder is not None else (0.0, 0.0)
    rhs1 = ops.M11 @ c1 / dt - ops.M12 @ d2 / dt - ops.A12 @ c2 - r1 + f1
    _check_finite(rhs1)
    c1_new = fac.solve1(rhs1)
    if form == "analysis":
        rhs2 = (ops.M22 @ c2 / dt - ops.M12.T @ d1 / dt - ops.A12.T @ c1_new - ops.A22 @ c2
                - r2 + f2)
    else:
        # second equation as printed: kappa0 terms act on (c1^n - c1^{n+1}) and the full
        # nonlinear action on u^n appears explicitly
        n2 = nonlinear[1] if nonlinear is not None else ops.A12.T @ c1 + ops.A22 @ c2
        rhs2 = ops.M22 @ c2 / dt - ops.M12.T @ d1 / dt - ops.A12.T @ (c1 - c1_new) - n2 + f2
    _check_finite(rhs2)
    c2_new = fac.solve2(rhs2 * dt)
    _check_finite(c1_new, c2_new)
    return state.advance(c1_new, c2_new)


def step_ein_split(system: CoarseSystem, state: SplitState, dt: float, form: str = "analysis",
                   factors: SplitFactors | None = None, deim: "DeimAssembler | None" = None,
                   loads=None, timings: dict | None = None) -> SplitState:
    """One EIN-splitting step: nonlinear remainder explicit, kappa0 split as in the linear scheme."""
    t0 = time.perf_counter()
    if deim is not None:
        r, nl = deim.remainder_and_action(state.c1, state.c2)
    else:
        u = system.fine_state(state.c1, state.c2)
        if form == "analysis":
            r, nl = system.remainder(u), None
        else:
            nl = system.nonlinear_action(u)
            o = system.ops
            r = (nl[0] - o.A11 @ state.c1 - o.A12 @ state.c2, None)
    if loads is None:
        loads = system.loads(state.n * dt)
    t1 = time.perf_counter()
    if form == "as_printed":
        r = (r[0], np.zeros(system.basis.n2))
    out = _split_step(system.ops, state, dt, loads, r, factors, form, nonlinear=nl)
    if timings is not None:
        timings["assembly"] = timings.get("assembly", 0.0) + t1 - t0
        timings["split_solve"] = timings.get("split_solve", 0.0) + time.perf_counter() - t1
    return out


class DeimAssembler:
    """Online coarse nonlinear terms through a DEIM model."""

    def __init__(self, system: CoarseSystem, model: DeimModel):
        if model.A_H1.shape[1:] != (system.basis.n1, system.basis.n1) or \
                model.A_H2.shape[1:] != (system.basis.n2, system.basis.n2):
            raise ConfigurationError("DEIM model was built for a different basis")
        self.system = system
        self.model = model
        mesh = system.spec.mesh
        cn = mesh.cell_nodes[model.indices]
        self.nodes, inv = np.unique(cn, return_inverse=True)
        self.local = inv.reshape(cn.shape)
        self.R1 = sp.csr_matrix(system.basis.psi1)[self.nodes]
        self.R2 = sp.csr_matrix(system.basis.psi2)[self.nodes]

    def coefficients(self, c1, c2):
        un = self.R1 @ c1 + self.R2 @ c2 + self.system.offset
        avg = un[self.local].mean(axis=1)
        return online_coefficients_from_cell_averages(self.model, avg, self.system.spec.field,
                                                      self.system.spec.law)

    def action(self, c1, c2):
        """DEIM approximation of the coarse projections of A(kappa(u)) u."""
        m = self.model
        c = self.coefficients(c1, c2)
        A1 = np.tensordot(c, m.A_H1, axes=1)
        A2 = np.tensordot(c, m.A_H2, axes=1)
        A12 = np.tensordot(c, m.A_H12, axes=1)
        return A1 @ c1 + A12 @ c2, A12.T @ c1 + A2 @ c2

    def remainder_and_action(self, c1, c2):
        o = self.system.ops
        n1, n2 = self.action(c1, c2)
        r = (n1 - o.A11 @ c1 - o.A12 @ c2, n2 - o.A12.T @ c1 - o.A22 @ c2)
        return r, (n1, n2)


def step_partial_explicit_lagged(system: CoarseSystem, state: SplitState, dt: float, loads=None,
                                 timings: dict | None = None) -> SplitState:
    """Splitting with kappa(u^n) in place of kappa0, reassembled and refactored each step."""
    t0 = time.perf_counter()
    spec = system.spec
    u = system.fine_state(state.c1, state.c2)
    A = fem.assemble_nonlinear_stiffness(spec.mesh, spec.field, spec.law, u)
    A11, A22, A12 = project_pair(system.basis, A)
    ops = replace(system.ops, A11=A11, A22=A22, A12=A12)
    if loads is None:
        loads = system.loads(state.n * dt)
    t1 = time.perf_counter()
    out = _split_step(ops, state, dt, loads, None, SplitFactors(ops, dt), "analysis")
    if timings is not None:
        timings["assembly"] = timings.get("assembly", 0.0) + t1 - t0
        timings["split_solve"] = timings.get("split_solve", 0.0) + time.perf_counter() - t1
    return out


def step_coarse_implicit(system: CoarseSystem, state: SplitState, dt: float,
                         cfg: NewtonConfig = NewtonConfig(), t_new=None,
                         timings: dict | None = None) -> tuple[SplitState, int]:
    """Implicit Euler on V_H with Newton; residual and Jacobian are Galerkin projections.

    The update norm is measured on the prolongated fine vector.
    """
    spec = system.spec
    mesh = spec.mesh
    P, PT, P_op = system.P, system.PT, system.P_op
    n1 = system.basis.n1
    t_new = (state.n + 1) * dt if t_new is None else t_new
    M = system.fine.M
    F = system.fine.load(t_new)
    c_prev = np.concatenate([state.c1, state.c2])
    u_prev = P @ c_prev + system.offset
    c = c_prev.copy()
    history = []
    linear = spec.law.is_linear and cfg.jacobian == "full"
    for k in range(1, cfg.max_iter + 1):
        t0 = time.perf_counter()
        u = P @ c + system.offset
        coef = fem.nonlinear_coefficient(mesh, spec.field, spec.law, u)
        Au = system.fine.asm.apply_stiffness(coef, u - system.offset)
        R = PT @ (M @ (u - u_prev) + dt * Au - dt * F)
        J = M + dt * fem.assemble_stiffness(mesh, coef)
        if cfg.jacobian == "full" and not spec.law.is_linear:
            J = J + dt * fem.assemble_chain_term(mesh, spec.field, spec.law, u)
        JH = P_op.T @ (J @ P_op)
        JH = JH.toarray() if sp.issparse(JH) else np.asarray(JH)
        t1 = time.perf_counter()
        try:
            delta = sla.lu_solve(sla.lu_factor(JH), -R)
        except (ValueError, sla.LinAlgError) as exc:
            raise NumericalError(f"singular coarse Jacobian: {exc}") from exc
        c = c + delta
        if timings is not None:
            timings["assembly"] = timings.get("assembly", 0.0) + t1 - t0
            timings["newton_solve"] = timings.get("newton_solve", 0.0) + time.perf_counter() - t1
        nrm = float(np.linalg.norm(P @ delta))
        history.append(nrm)
        if not np.isfinite(nrm):
            break
        thresh = cfg.tol * (max(1.0, float(np.linalg.norm(u + P @ delta))) if cfg.relative else 1.0)
        if nrm < thresh or linear:
            return state.advance(c[:n1], c[n1:]), k
    raise DivergenceError(
        f"coarse Newton did not converge in {cfg.max_iter} iterations (last update {history[-1]:.3e})",
        history=history,
    )


def run_scheme(spec: ProblemSpec, cfg: SchemeConfig, basis: MultiscaleBasis | None = None,
               deim_model: DeimModel | None = None, n_steps: int | None = None,
               system: CoarseSystem | None = None):
    """March a scheme to the final time; returns ``(fine trajectory, phase timings)``.

    Timings cover the time loop only (basis and DEIM offline work are excluded);
    writing the prolongated output states is timed separately under ``output``.
    """
    dt = spec.dt if cfg.dt is None else cfg.dt
    if cfg.dt is not None and cfg.dt != spec.dt:
        spec = replace(spec, dt=cfg.dt)
    steps = spec.n_steps if n_steps is None else int(n_steps)
    if steps < 1:
        raise ConfigurationError("a run needs at least one time step")
    if cfg.scheme is Scheme.FINE_REFERENCE:
        t0 = time.perf_counter()
        traj = run_reference(spec, cfg.newton, cfg.save_stride, steps)
        traj.label = cfg.scheme.value
        timings = {"total": time.perf_counter() - t0, "newton_iterations": int(sum(traj.iterations))}
        traj.phases = timings
        return traj, timings
    if basis is None and system is None:
        raise ConfigurationError(f"scheme {cfg.scheme.value} needs a multiscale basis")
    if cfg.scheme is Scheme.EIN_SPLIT_DEIM and deim_model is None:
        raise ConfigurationError("ein_split_deim needs a DEIM model")
    t_setup = time.perf_counter()
    system = system if system is not None else CoarseSystem(spec, basis, cfg.u_tilde)
    factors = None
    if cfg.scheme in (Scheme.LINEAR_PARTIAL_EXPLICIT, Scheme.EIN_SPLIT, Scheme.EIN_SPLIT_DEIM):
        factors = SplitFactors(system.ops, dt)
    deim = DeimAssembler(system, deim_model) if cfg.scheme is Scheme.EIN_SPLIT_DEIM else None
    timings = {"setup": time.perf_counter() - t_setup}
    state = system.initial_state()
    traj = Trajectory(dt=dt, save_stride=cfg.save_stride, label=cfg.scheme.value)
    traj.append(0.0, system.fine_state(state.c1, state.c2), coarse=(state.c1, state.c2))
    output = 0.0
    for n in range(steps):
        t0 = time.perf_counter()
        try:
            if cfg.scheme is Scheme.COARSE_IMPLICIT_NEWTON:
                state, its = step_coarse_implicit(system, state, dt, cfg.newton, (n + 1) * dt,
                                                  timings=timings)
                traj.iterations.append(its)
            elif cfg.scheme is Scheme.LINEAR_PARTIAL_EXPLICIT:
                ta = time.perf_counter()
                loads = system.loads(n * dt)
                tb = time.perf_counter()
                state = step_linear_partial_explicit(system.ops, state, dt, loads, factors)
                timings["assembly"] = timings.get("assembly", 0.0) + tb - ta
                timings["split_solve"] = timings.get("split_solve", 0.0) + time.perf_counter() - tb
            elif cfg.scheme is Scheme.PARTIAL_EXPLICIT_LAGGED:
                state = step_partial_explicit_lagged(system, state, dt, timings=timings)
            else:
                state = step_ein_split(system, state, dt, cfg.ein_form, factors, deim,
                                       timings=timings)
        except (NumericalError, DivergenceError) as exc:
            if isinstance(exc, DivergenceError):
                exc.step = n
                raise
            raise NumericalError(f"{exc} (step {n})") from exc
        traj.step_wall.append(time.perf_counter() - t0)
        if (n + 1) % cfg.save_stride == 0 or n + 1 == steps:
            to = time.perf_counter()
            traj.append((n + 1) * dt, system.fine_state(state.c1, state.c2),
                        coarse=(state.c1, state.c2))
            output += time.perf_counter() - to
    timings["output"] = output
    timings["total"] = traj.total_wall
    traj.phases = timings
    return traj, timings
