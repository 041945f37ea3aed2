"""Coefficients, nonlinear laws, channel geometries and problem definitions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .mesh import MeshHierarchy, build_hierarchy

MILLIDARCY = 9.869233e-16  # m^2


@dataclass(frozen=True)
class PermeabilityField:
    """Per-fine-cell values of the heterogeneous coefficient (row-major cells)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ConfigurationError("permeability values must be a flat per-cell array")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ConfigurationError("permeability values must be finite and positive")
        object.__setattr__(self, "values", v)

    @property
    def contrast(self) -> float:
        return float(self.values.max() / self.values.min())

    def scaled(self, s: float) -> "PermeabilityField":
        return PermeabilityField(self.values * s)


@dataclass(frozen=True)
class NonlinearLaw:
    """kappa_u as a function of the state.

    kind is one of ``"exp"`` (exp(beta*u)), ``"compressible"``
    (rho_ref*exp(c*(u-u_ref))) or ``"unit"`` (identically one).
    ``bounds`` is the state interval used by diagnostics.
    """

    kind: str
    beta: float = 0.0
    c: float = 0.0
    rho_ref: float = 1.0
    u_ref: float = 0.0
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("exp", "compressible", "unit"):
            raise ConfigurationError(f"unknown law kind {self.kind!r}")

    @property
    def is_linear(self) -> bool:
        return self.kind == "unit"

    def evaluate(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "exp":
            return np.exp(self.beta * u)
        if self.kind == "compressible":
            return self.rho_ref * np.exp(self.c * (u - self.u_ref))
        return np.ones_like(u)

    __call__ = evaluate

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "exp":
            return self.beta * np.exp(self.beta * u)
        if self.kind == "compressible":
            return self.c * self.rho_ref * np.exp(self.c * (u - self.u_ref))
        return np.zeros_like(u)


def ExpLaw(beta: float, bounds=(0.0, 1.0)) -> NonlinearLaw:
    return NonlinearLaw("exp", beta=float(beta), bounds=tuple(bounds))


def CompressibleLaw(c: float, rho_ref: float, u_ref: float, bounds=None) -> NonlinearLaw:
    if bounds is None:
        bounds = (u_ref - 1e7, u_ref + 1e7)
    return NonlinearLaw("compressible", c=float(c), rho_ref=float(rho_ref),
                        u_ref=float(u_ref), bounds=tuple(bounds))


def UnitLaw() -> NonlinearLaw:
    return NonlinearLaw("unit")


def kappa_u(law: NonlinearLaw, u):
    """Checked evaluation: rejects non-finite input, warns outside ``law.bounds``."""
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("kappa_u evaluated at a non-finite state")
    lo, hi = law.bounds
    if np.any(arr < lo) or np.any(arr > hi):
        warnings.warn(f"state outside diagnostic bounds [{lo}, {hi}]", stacklevel=2)
    out = law.evaluate(arr)
    return float(out) if np.ndim(out) == 0 else out


def empirical_lipschitz(law: NonlinearLaw, lo=None, hi=None, samples: int = 1001) -> float:
    """Largest difference quotient of kappa_u over a uniform sweep of [lo, hi]."""
    lo = law.bounds[0] if lo is None else lo
    hi = law.bounds[1] if hi is None else hi
    u = np.linspace(lo, hi, samples)
    k = law.evaluate(u)
    return float(np.max(np.abs(np.diff(k)) / np.diff(u)))


@dataclass(frozen=True)
class ChannelSegment:
    x0: float
    y0: float
    x1: float
    y1: float
    width: int  # in fine cells, measured across the segment
    value: float


@dataclass(frozen=True)
class ChannelGeometry:
    segments: tuple[ChannelSegment, ...] = ()

    def validate(self, extent) -> None:
        Lx, Ly = extent
        tol = 1e-12 * max(extent)
        for s in self.segments:
            if s.value <= 0:
                raise ConfigurationError(f"channel value {s.value} must be positive")
            if s.width < 1:
                raise ConfigurationError(f"channel width {s.width} must be >= 1 cell")
            for x, y in ((s.x0, s.y0), (s.x1, s.y1)):
                if not (-tol <= x <= Lx + tol and -tol <= y <= Ly + tol):
                    raise ConfigurationError(f"segment endpoint ({x}, {y}) outside domain")


def _segment_cells(mesh: MeshHierarchy, s: ChannelSegment) -> set[tuple[int, int]]:
    length = np.hypot(s.x1 - s.x0, s.y1 - s.y0)
    n = max(2, int(np.ceil(4 * length / min(mesh.hx, mesh.hy))) + 1)
    t = np.linspace(0.0, 1.0, n)
    xs = s.x0 + t * (s.x1 - s.x0)
    ys = s.y0 + t * (s.y1 - s.y0)
    ii = np.clip(np.floor(xs / mesh.hx).astype(int), 0, mesh.nx - 1)
    jj = np.clip(np.floor(ys / mesh.hy).astype(int), 0, mesh.ny - 1)
    core = []
    for k in range(n):
        if k and ii[k] != ii[k - 1] and jj[k] != jj[k - 1]:
            # keep diagonal steps 4-connected
            core.append((ii[k], jj[k - 1]))
        core.append((ii[k], jj[k]))
    lo, hi = -((s.width - 1) // 2), s.width // 2
    horizontal = abs(s.x1 - s.x0) >= abs(s.y1 - s.y0)
    cells = set()
    for i, j in core:
        for o in range(lo, hi + 1):
            a, b = (i, j + o) if horizontal else (i + o, j)
            if 0 <= a < mesh.nx and 0 <= b < mesh.ny:
                cells.add((a, b))
    return cells


def channelized_field(mesh: MeshHierarchy, geometry: ChannelGeometry, background) -> PermeabilityField:
    """Paint channel values over a background (scalar or existing field)."""
    geometry.validate(mesh.extent)
    if isinstance(background, PermeabilityField):
        values = background.values.copy()
    else:
        if background <= 0:
            raise ConfigurationError(f"background value {background} must be positive")
        values = np.full(mesh.n_cells, float(background))
    for seg in geometry.segments:
        for i, j in _segment_cells(mesh, seg):
            values[j * mesh.nx + i] = seg.value
    return PermeabilityField(values)


@dataclass(frozen=True)
class ProblemSpec:
    """Discrete problem data on a fixed mesh.

    The load is ``sum of point loads + M_unit @ source_fn(x, y, t)``; point
    sources act on the nearest fine node.  ``mass_weight`` multiplies the time
    derivative term.  ``dirichlet`` is ``(node indices, values)`` or ``None``
    for zero-Neumann everywhere.
    """

    mesh: MeshHierarchy
    field: PermeabilityField
    law: NonlinearLaw
    T: float
    dt: float
    u0: object = 0.0
    point_sources: tuple = ()
    source_fn: Optional[Callable] = None
    dirichlet: Optional[tuple] = None
    mass_weight: float = 1.0
    mass_lumping_law: str = "frozen"
    name: str = "custom"
    geometry: Optional[ChannelGeometry] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError(f"dt={self.dt} must be positive")
        if self.T < self.dt * (1 - 1e-12):
            raise ConfigurationError(f"T={self.T} shorter than one step dt={self.dt}")
        if self.field.values.size != self.mesh.n_cells:
            raise ConfigurationError("permeability field does not match the mesh cell count")
        if self.mass_weight <= 0:
            raise ConfigurationError("mass weight must be positive")
        if self.mass_lumping_law != "frozen":
            raise ConfigurationError(
                f"mass_lumping_law={self.mass_lumping_law!r}: only 'frozen' is supported")

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.T / self.dt - 1e-9))

    @property
    def is_time_dependent(self) -> bool:
        return self.source_fn is not None

    def initial_state(self) -> np.ndarray:
        if callable(self.u0):
            c = self.mesh.coords
            return np.asarray(self.u0(c[:, 0], c[:, 1]), dtype=float)
        u0 = np.asarray(self.u0, dtype=float)
        if u0.ndim == 0:
            return np.full(self.mesh.n_nodes, float(u0))
        if u0.size != self.mesh.n_nodes:
            raise ConfigurationError("initial state size does not match the mesh")
        return u0.copy()

    def point_load(self) -> np.ndarray:
        F = np.zeros(self.mesh.n_nodes)
        for x, y, q in self.point_sources:
            F[self.mesh.nearest_node(x, y)] += q
        return F

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


def example1_geometry(value: float = 1e4) -> ChannelGeometry:
    """Stand-in channel layout for the exponential-law benchmark.

    On a 10x10 coarse grid it produces 26 fracture continua, one per
    channel-carrying block, and routes a channel through the source point.
    """
    return ChannelGeometry((
        ChannelSegment(0.0, 0.11, 1.0, 0.11, 1, value),
        ChannelSegment(0.71, 0.0, 0.71, 1.0, 1, value),
        ChannelSegment(0.05, 0.63, 0.55, 0.63, 1, value),
        ChannelSegment(0.35, 0.82, 0.35, 0.88, 1, value),
    ))


def example2_geometry(value: float = 1e3, L: float = 64.0) -> ChannelGeometry:
    """Six full-width horizontal channels: 60 fracture continua on 10x10 blocks."""
    rows = (1, 2, 4, 5, 7, 8)
    H = L / 10
    return ChannelGeometry(tuple(
        ChannelSegment(0.0, (r + 0.55) * H, L, (r + 0.55) * H, 1, value) for r in rows
    ))


def builtin_spec(example: str, scale: str = "full") -> ProblemSpec:
    """The two benchmark problems.

    ``scale="desk"`` halves the fine resolution (coarse grid kept 10x10) and
    shortens the horizon five-fold at the same time step.
    """
    key = example.lower().replace("_", "").replace("-", "")
    if scale not in ("full", "desk"):
        raise ConfigurationError(f"unknown scale {scale!r}")
    n = 100 if scale == "full" else 50
    if key in ("example1", "ex1", "1"):
        mesh = build_hierarchy(n, n, 10, 10, (1.0, 1.0))
        geom = example1_geometry()
        field = channelized_field(mesh, geom, 1.0)
        T = 0.1 if scale == "full" else 0.02
        return ProblemSpec(
            mesh=mesh, field=field, law=ExpLaw(1.0, bounds=(0.0, 1.0)), T=T, dt=5e-5,
            u0=0.0, point_sources=((0.31, 0.11, 1.0),), name=f"example1-{scale}", geometry=geom,
        )
    if key in ("example2", "ex2", "2"):
        L = 64.0
        mesh = build_hierarchy(n, n, 10, 10, (L, L))
        geom = example2_geometry(L=L)
        mu = 5e-3  # 5 cP in Pa s
        perm = channelized_field(mesh, geom, 1.0)
        field = PermeabilityField(perm.values * MILLIDARCY / mu)
        c, rho_ref, u_ref, u0, phi = 1e-8, 850.0, 2e7, 2.16e7, 500.0
        law = CompressibleLaw(c, rho_ref, u_ref, bounds=(1.9e7, 2.4e7))
        mass = phi * c * float(law.evaluate(u0))
        T = 25.2 * 60 if scale == "full" else 25.2 * 60 / 5
        q = 0.05
        return ProblemSpec(
            mesh=mesh, field=field, law=law, T=T, dt=0.6048, u0=u0,
            point_sources=((8.0, 8.0, q), (56.0, 56.0, -q)), mass_weight=mass,
            name=f"example2-{scale}", geometry=geom,
        )
    raise ConfigurationError(f"unknown builtin example {example!r}")
