import json

import numpy as np
import pytest

from einsplit import fem
from einsplit.errors import ConfigurationError
from einsplit.experiment import (CSV_COLUMNS, ExperimentConfig, build_problem, compare, default_config,
                                 read_results, run_experiment)
from einsplit.fine_solver import Trajectory
from einsplit.mesh import build_hierarchy


def _traj(states, dt=0.1):
    t = Trajectory(dt=dt)
    for k, u in enumerate(states):
        t.append(k * dt, np.asarray(u, dtype=float))
    return t


def test_compare_identical_and_scaled(rng):
    mesh = build_hierarchy(4, 4, 1, 1)
    M = fem.assemble_mass(mesh)
    A = fem.assemble_stiffness(mesh, 1.0)
    states = [rng.standard_normal(mesh.n_nodes) for _ in range(4)]
    e = compare(_traj(states), _traj(states), M, A)
    assert e.l2_avg == 0 and e.energy_avg == 0
    e = compare(_traj(states), _traj([1.01 * u for u in states]), M, A)
    assert np.allclose(e.l2, 0.01) and np.allclose(e.energy, 0.01)
    assert len(e.l2) == 3


def test_compare_hand_norms():
    # 2x2 cells -> 3x3 nodes; unit square, hx = hy = 1/2
    mesh = build_hierarchy(2, 2, 1, 1)
    M = fem.assemble_mass(mesh)
    A = fem.assemble_stiffness(mesh, 1.0)
    ref = np.ones(9)
    cand = np.ones(9) + mesh.coords[:, 0]  # difference u = x
    e = compare(_traj([ref, ref]), _traj([ref, cand]), M, A)
    # ||x||_L2 = sqrt(1/3) against ||1|| = 1; the energy norm of a constant is zero -> absolute
    assert e.l2[0] == pytest.approx(np.sqrt(1 / 3))
    assert e.energy[0] == pytest.approx(1.0)
    assert e.absolute_steps == [1]


def test_compare_rejects_mismatch(rng):
    mesh = build_hierarchy(2, 2, 1, 1)
    M = fem.assemble_mass(mesh)
    a = _traj([np.zeros(9)] * 3)
    with pytest.raises(ConfigurationError):
        compare(a, _traj([np.zeros(9)] * 2), M, M)
    with pytest.raises(ConfigurationError):
        compare(a, _traj([np.zeros(9)] * 3, dt=0.2), M, M)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"problem": "example1", "schemes": []})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"problem": "example1", "schemes": ["ein_split"]})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"problem": "example1", "schemes": ["ein_split"], "colour": 1})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "bad.json")
    cfg = ExperimentConfig.from_dict(default_config())
    assert [b.counts for b in cfg.bases] == [(1, 1), (3, 3), (4, 4)]
    with pytest.raises(ConfigurationError):
        build_problem({"fine": [4, 4]})


def small_config(tmp_path, schemes=("ein_split", "ein_split_deim", "coarse_implicit_newton")):
    geom = tmp_path / "geom.txt"
    geom.write_text("0.0 0.26 1.0 0.26 1 1000.0\n0.71 0.0 0.71 1.0 1 1000.0\n")
    return {
        "problem": {"fine": [12, 12], "coarse": [3, 3], "geometry_file": str(geom), "T": 5e-4, "dt": 5e-5,
                    "point_sources": [[0.31, 0.26, 1.0]]},
        "bases": [{"label": "NLMC 1/1", "variant": "nlmc"},
                  {"label": "ENLMC 2/2", "variant": "enlmc", "counts": [2, 2]}],
        "layers": 2,
        "schemes": list(schemes),
        "out": str(tmp_path / "out"),
    }


def test_run_experiment_writes_reports_deterministically(tmp_path):
    d = small_config(tmp_path)
    cfg = ExperimentConfig.from_dict(d)
    res = run_experiment(cfg, tmp_path / "a")
    run_experiment(ExperimentConfig.from_dict(d), tmp_path / "b")
    a = (tmp_path / "a" / "results.csv").read_text()
    assert a == (tmp_path / "b" / "results.csv").read_text()
    rows = read_results(tmp_path / "a" / "results.csv")
    assert list(rows[0]) == CSV_COLUMNS
    assert len(rows) == 6 == len(res["rows"])
    assert all(r["verdict"] in ("pass", "fail") for r in rows)
    assert (tmp_path / "a" / "timings.csv").exists()
    assert (tmp_path / "a" / "errors_ein_split_nlmc_1_1.csv").exists()
    assert (tmp_path / "a" / "snapshot_reference_step10.txt").exists()
    assert (tmp_path / "a" / "snapshot_ein_split_enlmc_2_2_step2.txt").exists()


def test_failed_basis_is_recorded(tmp_path):
    d = small_config(tmp_path, ["ein_split"])
    d["bases"] = [{"label": "too many", "variant": "enlmc", "counts": [500, 500]}]
    res = run_experiment(ExperimentConfig.from_dict(d), tmp_path / "c")
    assert res["rows"][0]["verdict"].startswith("error")


def test_fine_reference_row(tmp_path):
    d = small_config(tmp_path, ["fine_reference"])
    d["bases"] = []
    res = run_experiment(ExperimentConfig.from_dict(d), tmp_path / "d")
    assert res["rows"][0]["l2_avg_pct"] == 0.0


def test_default_config_round_trips_json():
    d = default_config()
    assert ExperimentConfig.from_dict(json.loads(json.dumps(d))).layers == 6
