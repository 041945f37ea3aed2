"""Implicit Euler with Newton-Raphson on the fine grid (the reference solver)."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import ConfigurationError, DivergenceError, NumericalError
from .media import ProblemSpec


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping rule: Euclidean norm of the update below ``tol``.

    With ``relative=True`` the threshold is ``tol * max(1, ||u||)``, needed when
    the state carries a large offset (pressures around 1e7).
    """

    tol: float = 1e-10
    max_iter: int = 25
    jacobian: str = "full"
    relative: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigurationError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("Newton max_iter must be at least 1")
        if self.jacobian not in ("full", "frozen"):
            raise ConfigurationError(f"unknown Jacobian variant {self.jacobian!r}")


@dataclass
class Trajectory:
    dt: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    step_wall: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    save_stride: int = 1
    phases: dict = field(default_factory=dict)
    coarse: list = field(default_factory=list)  # (c1, c2) per saved step for coarse schemes
    final_updates: list = field(default_factory=list)  # last Newton update norm per step
    label: str = "reference"

    def append(self, t, u, coarse=None):
        self.times.append(float(t))
        self.states.append(np.array(u, dtype=float))
        if coarse is not None:
            self.coarse.append(tuple(np.array(c, dtype=float) for c in coarse))

    @property
    def array(self) -> np.ndarray:
        return np.vstack(self.states)

    @property
    def total_wall(self) -> float:
        return float(sum(self.step_wall))

    def __len__(self):
        return len(self.states)


class FineOperators:
    """Mass matrices, load data and constraints reused across steps."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        mesh = spec.mesh
        self.asm = fem.assembler(mesh)
        self.M = fem.assemble_mass(mesh, spec.mass_weight)
        self.M_unit = fem.assemble_mass(mesh, 1.0)
        self.F_point = spec.point_load()
        if spec.dirichlet is not None:
            nodes, values = spec.dirichlet
            self.dir_nodes = np.asarray(nodes, dtype=int)
            self.dir_values = np.broadcast_to(np.asarray(values, dtype=float), self.dir_nodes.shape).copy()
        else:
            self.dir_nodes = np.zeros(0, dtype=int)
            self.dir_values = np.zeros(0)

    def load(self, t: float) -> np.ndarray:
        F = self.F_point
        if self.spec.source_fn is not None:
            c = self.spec.mesh.coords
            F = F + self.M_unit @ np.asarray(self.spec.source_fn(c[:, 0], c[:, 1], t), dtype=float)
        return F

    def impose(self, u):
        u = np.array(u, dtype=float)
        u[self.dir_nodes] = self.dir_values
        return u


def _ops(spec, ops):
    return ops if ops is not None else FineOperators(spec)


def newton_residual(spec: ProblemSpec, u_prev, u_iter, dt, t=None, ops=None) -> np.ndarray:
    """(u_iter - u_prev, phi_i) + dt (kappa(u_iter) grad u_iter, grad phi_i) - dt (f, phi_i)."""
    ops = _ops(spec, ops)
    u_prev = np.asarray(u_prev, dtype=float)
    u_iter = np.asarray(u_iter, dtype=float)
    if u_prev.shape != u_iter.shape or u_iter.shape != (spec.mesh.n_nodes,):
        raise ConfigurationError("state dimensions do not match the mesh")
    if not (np.all(np.isfinite(u_prev)) and np.all(np.isfinite(u_iter))):
        raise NumericalError("non-finite state in Newton residual")
    t = spec.dt if t is None else t
    coef = fem.nonlinear_coefficient(spec.mesh, spec.field, spec.law, u_iter)
    R = ops.M @ (u_iter - u_prev) + dt * ops.asm.apply_stiffness(coef, u_iter) - dt * ops.load(t)
    R[ops.dir_nodes] = 0.0
    return R


def newton_jacobian(spec: ProblemSpec, u_iter, dt, variant: str = "full", ops=None) -> sp.csr_matrix:
    ops = _ops(spec, ops)
    mesh = spec.mesh
    J = ops.M + dt * fem.assemble_nonlinear_stiffness(mesh, spec.field, spec.law, u_iter)
    if variant == "full" and not spec.law.is_linear:
        J = J + dt * fem.assemble_chain_term(mesh, spec.field, spec.law, np.asarray(u_iter, dtype=float))
    elif variant not in ("full", "frozen"):
        raise ConfigurationError(f"unknown Jacobian variant {variant!r}")
    if ops.dir_nodes.size:
        keep = np.ones(mesh.n_nodes)
        keep[ops.dir_nodes] = 0.0
        J = sp.diags(keep) @ J @ sp.diags(keep) + sp.diags(1.0 - keep)
    return sp.csr_matrix(J)


def step_implicit_newton(spec: ProblemSpec, u_prev, dt, cfg: NewtonConfig = NewtonConfig(),
                         t_new=None, ops=None, history=None):
    """One implicit Euler step; returns ``(u_next, iterations)``.

    If ``history`` is a list, it is cleared and filled with the update norm of every iteration.
    """
    ops = _ops(spec, ops)
    u_prev = np.asarray(u_prev, dtype=float)
    if not np.all(np.isfinite(u_prev)):
        raise NumericalError("previous state is not finite")
    u = ops.impose(u_prev)
    history = [] if history is None else history
    history.clear()
    for k in range(1, cfg.max_iter + 1):
        R = newton_residual(spec, u_prev, u, dt, t=t_new, ops=ops)
        J = newton_jacobian(spec, u, dt, cfg.jacobian, ops=ops)
        try:
            delta = spla.splu(sp.csc_matrix(J)).solve(-R)
        except RuntimeError as exc:
            raise NumericalError(f"singular Newton Jacobian: {exc}") from exc
        u = u + delta
        nrm = float(np.linalg.norm(delta))
        history.append(nrm)
        if not np.isfinite(nrm):
            break
        thresh = cfg.tol * (max(1.0, float(np.linalg.norm(u))) if cfg.relative else 1.0)
        # a linear residual is solved exactly by one full Newton step
        if nrm < thresh or (spec.law.is_linear and cfg.jacobian == "full"):
            return u, k
    raise DivergenceError(
        f"Newton did not converge in {cfg.max_iter} iterations (last update {history[-1]:.3e})",
        history=list(history),
    )


def run_reference(spec: ProblemSpec, cfg: NewtonConfig = NewtonConfig(), save_stride: int = 1,
                  n_steps=None) -> Trajectory:
    if save_stride < 1:
        raise ConfigurationError("save stride must be at least 1")
    ops = FineOperators(spec)
    dt = spec.dt
    steps = spec.n_steps if n_steps is None else int(n_steps)
    if steps < 1:
        raise ConfigurationError("a run needs at least one time step (T >= dt)")
    traj = Trajectory(dt=dt, save_stride=save_stride)
    u = ops.impose(spec.initial_state())
    traj.append(0.0, u)
    hist = []
    for n in range(steps):
        t0 = time.perf_counter()
        try:
            u, its = step_implicit_newton(spec, u, dt, cfg, t_new=(n + 1) * dt, ops=ops, history=hist)
        except DivergenceError as exc:
            exc.step = n
            raise
        traj.step_wall.append(time.perf_counter() - t0)
        traj.iterations.append(its)
        traj.final_updates.append(hist[-1])
        if (n + 1) % save_stride == 0 or n + 1 == steps:
            traj.append((n + 1) * dt, u)
    return traj
