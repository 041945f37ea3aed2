import numpy as np
import pytest

from einsplit.media import ChannelGeometry, ChannelSegment, ExpLaw, ProblemSpec, UnitLaw, channelized_field
from einsplit.mesh import build_hierarchy


def channel_spec(n=20, N=4, law=None, contrast=1e3, T=1e-3, dt=5e-5, u0=0.0, sources=((0.31, 0.26, 1.0),)):
    """Small high-contrast problem: one horizontal and one vertical channel."""
    mesh = build_hierarchy(n, n, N, N)
    geom = ChannelGeometry((
        ChannelSegment(0.0, 0.26, 1.0, 0.26, 1, contrast),
        ChannelSegment(0.71, 0.0, 0.71, 1.0, 1, contrast),
    ))
    field = channelized_field(mesh, geom, 1.0)
    return ProblemSpec(mesh=mesh, field=field, law=law if law is not None else ExpLaw(1.0), T=T, dt=dt,
                       u0=u0, point_sources=tuple(sources), geometry=geom)


@pytest.fixture
def small_spec():
    return channel_spec()


@pytest.fixture
def unit_spec():
    return channel_spec(law=UnitLaw())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (title, passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, title, passed, detail):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
