"""Run matrices of (basis, scheme) pairs against the fine reference and write reports.

A config is a JSON object::

    {
      "problem": {"builtin": "example1", "scale": "desk"},
      "bases": [{"label": "NLMC 1/1", "variant": "nlmc"},
                {"label": "ENLMC 2/2", "variant": "enlmc", "counts": [3, 3]}],
      "layers": 6,
      "schemes": ["ein_split", "partial_explicit_lagged", "coarse_implicit_newton", "ein_split_deim"],
      "deim": {"energy": 0.9999, "source": "coarse_implicit", "window": 0.25, "stride": 1},
      "out": "results"
    }

Outputs in ``out``: ``results.csv`` (error and stability columns, deterministic),
``timings.csv`` (wall clock per row), ``errors_<row>.csv`` per-step error
histories and ``snapshot_<row>_<step>.txt`` solution dumps at step 2 and at
the final step.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .deim import build_deim_model, collect_snapshots
from .errors import ConfigurationError, DivergenceError, NumericalError
from .fileio import read_field, read_geometry
from .fine_solver import NewtonConfig, Trajectory
from .media import (ChannelGeometry, ExpLaw, ProblemSpec, UnitLaw, CompressibleLaw, builtin_spec,
                    channelized_field)
from .mesh import build_hierarchy
from .multiscale import build_enlmc_basis, build_nlmc_basis, partition_continua
from .splitting import CoarseSystem, Scheme, SchemeConfig, kappa0_cells, run_scheme, u_tilde_cells
from .stability import report_for

log = logging.getLogger(__name__)

CSV_COLUMNS = ["scheme", "basis", "dof1", "dof2", "l2_avg_pct", "energy_avg_pct", "gamma", "c1",
               "lambda_max", "dt_max", "verdict"]
TIMING_COLUMNS = ["scheme", "basis", "wall_s", "assembly_s", "solve_s", "setup_s", "offline_s",
                  "newton_iterations"]


@dataclass(frozen=True)
class BasisSettings:
    label: str
    variant: str = "nlmc"
    counts: tuple = (1, 1)
    auxiliary: str = "spectral"

    def __post_init__(self):
        if self.variant not in ("nlmc", "enlmc"):
            raise ConfigurationError(f"unknown basis variant {self.variant!r}")


@dataclass(frozen=True)
class DeimSettings:
    energy: float = 0.9999
    source: str = "coarse_implicit"  # or "reference"
    window: float = 0.25  # fraction of the horizon used for snapshots
    stride: int = 1

    def __post_init__(self):
        if self.source not in ("coarse_implicit", "reference"):
            raise ConfigurationError(f"unknown snapshot source {self.source!r}")
        if not 0 < self.window <= 1:
            raise ConfigurationError("snapshot window must lie in (0, 1]")


@dataclass
class ExperimentConfig:
    problem: dict
    schemes: list
    bases: list = field(default_factory=list)
    layers: int = 2
    deim: DeimSettings = DeimSettings()
    ein_form: str = "analysis"
    u_tilde: object = "initial_state"
    newton: NewtonConfig = NewtonConfig()
    out: str = "results"
    seed: int = 0
    save_stride: int = 1
    n_steps: int | None = None
    c1_reading: str = "max"

    def __post_init__(self):
        if not self.schemes:
            raise ConfigurationError("the scheme list is empty")
        self.schemes = [Scheme(s) for s in self.schemes]
        coarse = [s for s in self.schemes if s is not Scheme.FINE_REFERENCE]
        if coarse and not self.bases:
            raise ConfigurationError("coarse schemes need at least one basis setting")
        if self.layers < 0:
            raise ConfigurationError("layers must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {"problem", "schemes", "bases", "layers", "deim", "ein_form", "u_tilde", "newton",
                 "out", "seed", "save_stride", "n_steps", "c1_reading"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "problem" not in d or "schemes" not in d:
            raise ConfigurationError("config needs 'problem' and 'schemes'")
        problem = d["problem"]
        if isinstance(problem, str):
            problem = {"builtin": problem}
        bases = []
        for b in d.get("bases", []):
            b = dict(b)
            if "counts" in b:
                b["counts"] = tuple(int(v) for v in b["counts"])
            b.setdefault("label", b.get("variant", "nlmc").upper())
            bases.append(BasisSettings(**b))
        deim = DeimSettings(**d.get("deim", {}))
        newton = NewtonConfig(**d.get("newton", {}))
        kw = {k: d[k] for k in ("layers", "ein_form", "u_tilde", "out", "seed", "save_stride",
                                "n_steps", "c1_reading") if k in d}
        return cls(problem=problem, schemes=list(d["schemes"]), bases=bases, deim=deim,
                   newton=newton, **kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(d)


def build_problem(problem: dict) -> ProblemSpec:
    """Builtin benchmark (``{"builtin": id, "scale": ...}``) or a file-based problem."""
    if "builtin" in problem:
        spec = builtin_spec(problem["builtin"], problem.get("scale", "desk"))
        overrides = {k: problem[k] for k in ("T", "dt") if k in problem}
        return spec.with_(**overrides) if overrides else spec
    try:
        nx, ny = problem["fine"]
        Nx, Ny = problem["coarse"]
        extent = tuple(problem.get("extent", (1.0, 1.0)))
        mesh = build_hierarchy(nx, ny, Nx, Ny, extent)
        if "field_file" in problem:
            fld = read_field(problem["field_file"], mesh)
            geom = None
        else:
            geom = read_geometry(problem["geometry_file"]) if "geometry_file" in problem else ChannelGeometry()
            fld = channelized_field(mesh, geom, float(problem.get("background", 1.0)))
        law_d = problem.get("law", {"kind": "exp", "beta": 1.0})
        kind = law_d.get("kind", "exp")
        if kind == "exp":
            law = ExpLaw(float(law_d.get("beta", 1.0)))
        elif kind == "unit":
            law = UnitLaw()
        elif kind == "compressible":
            law = CompressibleLaw(float(law_d["c"]), float(law_d["rho_ref"]), float(law_d["u_ref"]))
        else:
            raise ConfigurationError(f"unknown law kind {kind!r}")
        return ProblemSpec(mesh=mesh, field=fld, law=law, T=float(problem["T"]), dt=float(problem["dt"]),
                           u0=float(problem.get("u0", 0.0)),
                           point_sources=tuple(tuple(p) for p in problem.get("point_sources", ())),
                           mass_weight=float(problem.get("mass_weight", 1.0)),
                           name=problem.get("name", "custom"), geometry=geom)
    except KeyError as exc:
        raise ConfigurationError(f"problem definition is missing {exc}") from exc


def build_basis(spec: ProblemSpec, settings: BasisSettings, layers: int, u_tilde="initial_state"):
    kappa0 = kappa0_cells(spec, u_tilde)
    part = partition_continua(spec.field, spec.mesh)
    if settings.variant == "nlmc":
        return build_nlmc_basis(spec.mesh, part, kappa0, layers)
    return build_enlmc_basis(spec.mesh, part, kappa0, settings.counts, layers, settings.auxiliary)


@dataclass
class ErrorSeries:
    l2: np.ndarray
    energy: np.ndarray
    times: np.ndarray
    absolute_steps: list = field(default_factory=list)

    @property
    def l2_avg(self) -> float:
        return float(np.mean(self.l2)) if self.l2.size else 0.0

    @property
    def energy_avg(self) -> float:
        return float(np.mean(self.energy)) if self.energy.size else 0.0


def compare(reference: Trajectory, candidate: Trajectory, M, A, skip_initial: bool = True) -> ErrorSeries:
    """Per-step relative errors ``||u_ref - u_c|| / ||u_ref||`` in the M and A norms.

    Steps where the reference norm vanishes fall back to absolute errors and are listed
    in ``absolute_steps``.  The initial state is skipped by default.
    """
    if len(reference.states) != len(candidate.states):
        raise ConfigurationError(
            f"trajectories have {len(reference.states)} and {len(candidate.states)} saved states")
    if not np.allclose(reference.times, candidate.times, rtol=1e-9, atol=1e-12):
        raise ConfigurationError("trajectories are on different time grids")
    start = 1 if skip_initial and len(reference.states) > 1 else 0
    l2, en, absolute = [], [], []
    for k in range(start, len(reference.states)):
        ur = reference.states[k]
        d = ur - candidate.states[k]
        nr_l2, nr_en = fem.l2_norm(M, ur), fem.energy_norm(A, ur)
        e_l2, e_en = fem.l2_norm(M, d), fem.energy_norm(A, d)
        if nr_l2 == 0 or nr_en == 0:
            absolute.append(k)
        l2.append(e_l2 / nr_l2 if nr_l2 > 0 else e_l2)
        en.append(e_en / nr_en if nr_en > 0 else e_en)
    return ErrorSeries(np.array(l2), np.array(en), np.array(reference.times[start:]), absolute)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").lower()


def _write_snapshot(path, mesh, step, t, u):
    with open(path, "w") as fh:
        fh.write(f"{mesh.nx} {mesh.ny} {step} {t!r}\n")
        fh.write("\n".join(repr(float(v)) for v in u) + "\n")


def _fmt(v, digits=6):
    if isinstance(v, str):
        return v
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.{digits}g}"


def _stability_for(system, spec, traj, cfg):
    samples = np.array([fem.cell_average(spec.mesh, u) for u in traj.states])
    ut = u_tilde_cells(spec, cfg.u_tilde)
    return report_for(system.ops, spec.law, ut, samples, spec.dt, system.kappa0, cfg.c1_reading)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every (basis, scheme) row; returns the rows plus the timing table."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(cfg.seed)
    spec = build_problem(cfg.problem)
    mesh = spec.mesh
    steps = spec.n_steps if cfg.n_steps is None else int(cfg.n_steps)
    M = fem.assemble_mass(mesh, spec.mass_weight)
    A0 = fem.assemble_stiffness(mesh, kappa0_cells(spec, cfg.u_tilde))

    t0 = time.perf_counter()
    ref_cfg = SchemeConfig(scheme=Scheme.FINE_REFERENCE, newton=cfg.newton, save_stride=cfg.save_stride)
    reference, ref_t = run_scheme(spec, ref_cfg, n_steps=steps)
    log.info("reference: %d states in %.2f s", len(reference.states), time.perf_counter() - t0)
    rows, timings = [], []
    snap_steps = _snapshot_indices(reference)
    _dump_snapshots(out, "reference", mesh, reference, snap_steps)
    if Scheme.FINE_REFERENCE in cfg.schemes:
        rows.append({"scheme": "fine_reference", "basis": "fine", "dof1": mesh.n_nodes, "dof2": 0,
                     "l2_avg_pct": 0.0, "energy_avg_pct": 0.0, "gamma": float("nan"),
                     "c1": float("nan"), "lambda_max": float("nan"), "dt_max": float("nan"),
                     "verdict": "n/a"})
        timings.append({"scheme": "fine_reference", "basis": "fine", "wall_s": ref_t["total"],
                        "assembly_s": float("nan"), "solve_s": float("nan"), "setup_s": 0.0,
                        "offline_s": 0.0, "newton_iterations": ref_t.get("newton_iterations", 0)})

    for bset in cfg.bases:
        tb = time.perf_counter()
        try:
            basis = build_basis(spec, bset, cfg.layers, cfg.u_tilde)
        except (ConfigurationError, NumericalError) as exc:
            for sch in cfg.schemes:
                if sch is not Scheme.FINE_REFERENCE:
                    rows.append(_failed_row(sch, bset, exc))
            continue
        basis_time = time.perf_counter() - tb
        system = CoarseSystem(spec, basis, cfg.u_tilde)
        coarse_runs = {}
        for sch in cfg.schemes:
            if sch is Scheme.FINE_REFERENCE:
                continue
            scfg = SchemeConfig(scheme=sch, ein_form=cfg.ein_form, u_tilde=cfg.u_tilde,
                                newton=cfg.newton, save_stride=cfg.save_stride)
            offline = basis_time
            try:
                model = None
                if sch is Scheme.EIN_SPLIT_DEIM:
                    to = time.perf_counter()
                    model = _train_deim(spec, cfg, basis, system, reference, coarse_runs, steps)
                    offline += time.perf_counter() - to
                traj, tm = run_scheme(spec, scfg, basis, model, n_steps=steps, system=system)
            except (ConfigurationError, NumericalError, DivergenceError) as exc:
                log.warning("%s / %s failed: %s", sch.value, bset.label, exc)
                rows.append(_failed_row(sch, bset, exc, basis))
                continue
            coarse_runs[sch] = traj
            errs = compare(reference, traj, M, A0)
            rep = _stability_for(system, spec, traj, cfg)
            name = f"{sch.value}_{_slug(bset.label)}"
            _write_errors(out / f"errors_{name}.csv", errs)
            _dump_snapshots(out, name, mesh, traj, snap_steps)
            rows.append({"scheme": sch.value, "basis": bset.label, "dof1": basis.n1, "dof2": basis.n2,
                         "l2_avg_pct": 100 * errs.l2_avg, "energy_avg_pct": 100 * errs.energy_avg,
                         "gamma": rep.gamma, "c1": rep.c1, "lambda_max": rep.lambda_max,
                         "dt_max": rep.dt_max, "verdict": rep.verdict})
            timings.append({"scheme": sch.value, "basis": bset.label, "wall_s": tm["total"],
                            "assembly_s": tm.get("assembly", 0.0),
                            "solve_s": tm.get("split_solve", 0.0) + tm.get("newton_solve", 0.0),
                            "setup_s": tm.get("setup", 0.0), "offline_s": offline,
                            "newton_iterations": int(sum(traj.iterations))})
    _write_csv(out / "results.csv", CSV_COLUMNS, rows)
    _write_csv(out / "timings.csv", TIMING_COLUMNS, timings, digits=4)
    return {"rows": rows, "timings": timings, "reference": reference}


def _snapshot_indices(traj):
    last = len(traj.states) - 1
    second = 2 if traj.save_stride == 1 and last >= 2 else min(1, last)
    return sorted({second, last})


def _dump_snapshots(out, name, mesh, traj, indices):
    for k in indices:
        step = int(round(traj.times[k] / traj.dt))
        _write_snapshot(out / f"snapshot_{name}_step{step}.txt", mesh, step, traj.times[k], traj.states[k])


def _train_deim(spec, cfg, basis, system, reference, coarse_runs, steps):
    d = cfg.deim
    n_window = max(1, int(round(d.window * steps)))
    if d.source == "reference":
        states = reference.states[: n_window + 1]
    elif Scheme.COARSE_IMPLICIT_NEWTON in coarse_runs and cfg.save_stride == 1:
        states = coarse_runs[Scheme.COARSE_IMPLICIT_NEWTON].states[: n_window + 1]
    else:
        burn = SchemeConfig(scheme=Scheme.COARSE_IMPLICIT_NEWTON, u_tilde=cfg.u_tilde, newton=cfg.newton)
        states = run_scheme(spec, burn, basis, n_steps=n_window, system=system)[0].states
    snaps = collect_snapshots(spec, states, d.stride)
    return build_deim_model(spec.mesh, basis, snaps, d.energy)


def _failed_row(sch, bset, exc, basis=None):
    return {"scheme": sch.value, "basis": bset.label, "dof1": basis.n1 if basis else 0,
            "dof2": basis.n2 if basis else 0, "l2_avg_pct": float("nan"),
            "energy_avg_pct": float("nan"), "gamma": float("nan"), "c1": float("nan"),
            "lambda_max": float("nan"), "dt_max": float("nan"),
            "verdict": "error: " + str(exc).replace(",", ";").splitlines()[0]}


def _write_errors(path, errs: ErrorSeries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "l2_rel", "energy_rel"])
        for k, (t, a, b) in enumerate(zip(errs.times, errs.l2, errs.energy), start=1):
            w.writerow([k, f"{t:.10g}", f"{a:.10g}", f"{b:.10g}"])


def _write_csv(path, columns, rows, digits=6):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, ""), digits) for c in columns])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def stability_reports(cfg: ExperimentConfig) -> list:
    """Per-basis stability report for the frozen coefficient, sampling the initial state only."""
    spec = build_problem(cfg.problem)
    out = []
    for bset in cfg.bases:
        basis = build_basis(spec, bset, cfg.layers, cfg.u_tilde)
        system = CoarseSystem(spec, basis, cfg.u_tilde)
        samples = fem.cell_average(spec.mesh, spec.initial_state())[None, :]
        ut = u_tilde_cells(spec, cfg.u_tilde)
        out.append((bset.label, report_for(system.ops, spec.law, ut, samples, spec.dt, system.kappa0,
                                           cfg.c1_reading)))
    return out


def default_config(example: str = "example1", scale: str = "desk") -> dict:
    """Benchmark config: three bases (NLMC and two ENLMC enrichments) against four coarse schemes."""
    return {
        "problem": {"builtin": example, "scale": scale},
        "bases": [
            {"label": "NLMC 1/1", "variant": "nlmc"},
            {"label": "ENLMC 2/2", "variant": "enlmc", "counts": [3, 3]},
            {"label": "ENLMC 3/3", "variant": "enlmc", "counts": [4, 4]},
        ],
        "layers": 6,
        "schemes": ["ein_split", "partial_explicit_lagged", "coarse_implicit_newton", "ein_split_deim"],
        "deim": {"energy": 0.9999, "source": "coarse_implicit", "window": 0.25, "stride": 1},
        "out": "results",
    }
