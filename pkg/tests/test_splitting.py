import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from einsplit import fem
from einsplit.errors import ConfigurationError, NumericalError
from einsplit.fine_solver import NewtonConfig
from einsplit.media import CompressibleLaw, UnitLaw
from einsplit.multiscale import build_enlmc_basis, build_nlmc_basis, partition_continua
from einsplit.oracles import dense_ein_trajectory
from einsplit.splitting import (CoarseSystem, Scheme, SchemeConfig, SplitState, kappa0_cells, run_scheme,
                                step_coarse_implicit)

from conftest import channel_spec


def _basis(spec, kind="nlmc", layers=1):
    part = partition_continua(spec.field, spec.mesh)
    k0 = kappa0_cells(spec)
    if kind == "nlmc":
        return build_nlmc_basis(spec.mesh, part, k0, layers=layers)
    return build_enlmc_basis(spec.mesh, part, k0, counts=(2, 2), layers=layers)


def _states(traj):
    return np.array(traj.states)


@pytest.fixture(scope="module")
def nl_setup():
    spec = channel_spec(n=12, N=3, T=1e-3, dt=5e-5)
    return spec, _basis(spec)


def test_unit_law_ein_equals_linear_scheme():
    spec = channel_spec(n=12, N=3, law=UnitLaw(), T=5e-4)
    basis = _basis(spec)
    a, _ = run_scheme(spec, SchemeConfig(Scheme.EIN_SPLIT), basis)
    b, _ = run_scheme(spec, SchemeConfig(Scheme.LINEAR_PARTIAL_EXPLICIT), basis)
    A, B = _states(a), _states(b)
    assert np.abs(A - B).max() <= 1e-12 * np.abs(B).max()


@pytest.mark.parametrize("form", ["analysis", "as_printed"])
def test_ein_matches_dense_transcription(nl_setup, form):
    spec, basis = nl_setup
    traj, _ = run_scheme(spec, SchemeConfig(Scheme.EIN_SPLIT, ein_form=form), basis, n_steps=8)
    ref = dense_ein_trajectory(spec.mesh, spec.field.values, spec.law, kappa0_cells(spec),
                               basis.psi1.toarray(), basis.psi2.toarray(), spec.point_load(),
                               spec.initial_state(), spec.dt, 8, form)
    for u, r in zip(traj.states, ref):
        assert np.linalg.norm(u - r) <= 1e-10 * max(np.linalg.norm(r), 1e-30) + 1e-14


def test_constant_state_is_preserved():
    # global oversampling puts constants inside the span
    spec = channel_spec(n=12, N=3, u0=0.4, sources=())
    basis = _basis(spec, "enlmc", layers=3)
    for scheme in (Scheme.EIN_SPLIT, Scheme.PARTIAL_EXPLICIT_LAGGED, Scheme.COARSE_IMPLICIT_NEWTON):
        traj, _ = run_scheme(spec, SchemeConfig(scheme), basis, n_steps=5)
        for u in traj.states:
            assert np.allclose(u, 0.4, atol=1e-8)


def _galerkin(spec, basis):
    M = fem.assemble_mass(spec.mesh)
    A = fem.assemble_stiffness(spec.mesh, kappa0_cells(spec))
    P = basis.psi.toarray()
    return P, P.T @ M @ P, P.T @ A @ P, P.T @ spec.point_load()


def test_empty_second_subspace_is_implicit_euler():
    spec = channel_spec(n=12, N=3, law=UnitLaw(), T=5e-4)
    full = _basis(spec)
    basis = dataclasses.replace(full, psi1=full.psi, psi2=sp.csc_matrix((full.n_fine, 0)),
                                tags1=full.tags1 + full.tags2, tags2=[])
    traj, _ = run_scheme(spec, SchemeConfig(Scheme.LINEAR_PARTIAL_EXPLICIT), basis)
    P, MH, AH, fH = _galerkin(spec, basis)
    c = np.linalg.solve(MH, P.T @ fem.assemble_mass(spec.mesh) @ spec.initial_state())
    for u in traj.states[1:]:
        c = np.linalg.solve(MH / spec.dt + AH, MH @ c / spec.dt + fH)
        assert np.allclose(u, P @ c, rtol=1e-10, atol=1e-14)


def test_empty_first_subspace_is_explicit_euler():
    spec = channel_spec(n=12, N=3, law=UnitLaw(), T=2e-4, dt=1e-5)
    full = _basis(spec)
    basis = dataclasses.replace(full, psi2=full.psi, psi1=sp.csc_matrix((full.n_fine, 0)),
                                tags2=full.tags1 + full.tags2, tags1=[])
    traj, _ = run_scheme(spec, SchemeConfig(Scheme.LINEAR_PARTIAL_EXPLICIT), basis)
    P, MH, AH, fH = _galerkin(spec, basis)
    c = np.zeros(P.shape[1])
    for u in traj.states[1:]:
        c = c + spec.dt * np.linalg.solve(MH, fH - AH @ c)
        assert np.allclose(u, P @ c, rtol=1e-9, atol=1e-14)


def test_coarse_implicit_linear_matches_galerkin():
    spec = channel_spec(n=12, N=3, law=UnitLaw(), T=3e-4)
    basis = _basis(spec)
    traj, _ = run_scheme(spec, SchemeConfig(Scheme.COARSE_IMPLICIT_NEWTON), basis)
    assert traj.iterations == [1] * spec.n_steps
    P, MH, AH, fH = _galerkin(spec, basis)
    c = np.zeros(P.shape[1])
    for u in traj.states[1:]:
        c = np.linalg.solve(MH + spec.dt * AH, MH @ c + spec.dt * fH)
        assert np.allclose(u, P @ c, rtol=1e-10, atol=1e-14)


def test_coarse_implicit_solves_projected_residual(nl_setup):
    spec, basis = nl_setup
    system = CoarseSystem(spec, basis)
    state = system.initial_state()
    new, its = step_coarse_implicit(system, state, spec.dt, NewtonConfig(tol=1e-12))
    assert its <= 10
    u0, u1 = system.fine_state(state.c1, state.c2), system.fine_state(new.c1, new.c2)
    M = fem.assemble_mass(spec.mesh)
    A = fem.assemble_nonlinear_stiffness(spec.mesh, spec.field, spec.law, u1)
    R = basis.psi.T @ (M @ (u1 - u0) + spec.dt * (A @ u1 - spec.point_load()))
    assert np.abs(R).max() <= 1e-10 * np.abs(basis.psi.T @ (spec.dt * spec.point_load())).max()


def test_lagged_scheme_with_unit_law_equals_linear(nl_setup):
    spec = channel_spec(n=12, N=3, law=UnitLaw(), T=3e-4)
    basis = _basis(spec)
    a, _ = run_scheme(spec, SchemeConfig(Scheme.PARTIAL_EXPLICIT_LAGGED), basis)
    b, _ = run_scheme(spec, SchemeConfig(Scheme.LINEAR_PARTIAL_EXPLICIT), basis)
    assert np.allclose(_states(a), _states(b), rtol=1e-10, atol=1e-14)


def test_timings_and_stride(nl_setup):
    spec, basis = nl_setup
    traj, t = run_scheme(spec, SchemeConfig(Scheme.EIN_SPLIT, save_stride=4), basis, n_steps=10)
    assert [round(x / spec.dt) for x in traj.times] == [0, 4, 8, 10]
    assert {"setup", "assembly", "split_solve", "output", "total"} <= set(t)
    assert len(traj.coarse) == len(traj.states)


def test_split_state_advance():
    s = SplitState.cold([1.0], [2.0])
    t = s.advance(np.array([1.5]), np.array([1.0]))
    assert t.n == 1 and t.d1[0] == 0.5 and t.d2[0] == -1.0


def test_config_validation(nl_setup):
    spec, basis = nl_setup
    with pytest.raises(ConfigurationError):
        SchemeConfig(ein_form="other")
    with pytest.raises(ConfigurationError):
        SchemeConfig(u_tilde="mean")
    with pytest.raises(ConfigurationError):
        SchemeConfig(Scheme.EIN_SPLIT, use_deim=True)
    with pytest.raises(ConfigurationError):
        SchemeConfig(save_stride=0)
    with pytest.raises(ValueError):
        SchemeConfig("leapfrog")
    assert SchemeConfig("ein_split_deim").use_deim
    with pytest.raises(ConfigurationError):
        run_scheme(spec, SchemeConfig(), basis, n_steps=0)
    with pytest.raises(ConfigurationError):
        run_scheme(spec, SchemeConfig())
    with pytest.raises(ConfigurationError):
        run_scheme(spec, SchemeConfig("ein_split_deim"), basis)


def test_nonhomogeneous_dirichlet_rejected(nl_setup):
    spec, basis = nl_setup
    bad = spec.with_(dirichlet=(spec.mesh.boundary_nodes, 1.0))
    with pytest.raises(ConfigurationError):
        CoarseSystem(bad, basis)


def test_blow_up_reports_step():
    spec = channel_spec(n=12, N=3, law=UnitLaw(), T=1.0, dt=1.0, sources=(), u0=lambda x, y: np.cos(7 * x))
    full = _basis(spec)
    basis = dataclasses.replace(full, psi2=full.psi, psi1=sp.csc_matrix((full.n_fine, 0)),
                                tags2=full.tags1 + full.tags2, tags1=[])
    with pytest.raises(NumericalError, match="step"):
        run_scheme(spec, SchemeConfig(Scheme.LINEAR_PARTIAL_EXPLICIT), basis, n_steps=2000)


def test_constant_offset_is_exact_with_local_bases():
    spec = channel_spec(n=12, N=3, u0=0.4, sources=((0.31, 0.26, 1.0),))
    basis = _basis(spec, "nlmc", layers=1)
    system = CoarseSystem(spec, basis)
    assert system.offset == 0.4
    a, _ = run_scheme(spec, SchemeConfig(Scheme.EIN_SPLIT), basis, n_steps=6, system=system)
    # the same run shifted to zero initial data, with kappa evaluated at the shifted state
    shifted = spec.with_(u0=0.0, law=CompressibleLaw(1.0, 1.0, -0.4))
    b, _ = run_scheme(shifted, SchemeConfig(Scheme.EIN_SPLIT), basis, n_steps=6)
    for u, v in zip(a.states, b.states):
        assert np.allclose(u - 0.4, v, atol=1e-12)
