"""Shared meshes and solved fields; the expensive solves run once per session."""

import numpy as np
import pytest

from discbundle import harmonic as hm
from discbundle import moebius as mb
from discbundle.config import RunConfig
from discbundle.mesh import build_polygon, gradient_stencil, triangulate
from discbundle.pipeline import run_pipeline

_MESHES = {}

# (number, title, passed, detail, seconds) per acceptance criterion
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail, dt in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail} ({dt:.2f}s)")


def get_mesh(resolution):
    if resolution not in _MESHES:
        m = triangulate(build_polygon(2), resolution)
        gradient_stencil(m)
        _MESHES[resolution] = m
    return _MESHES[resolution]


@pytest.fixture(scope="session")
def mesh8():
    return get_mesh(8)


@pytest.fixture(scope="session")
def mesh16():
    return get_mesh(16)


@pytest.fixture(scope="session")
def mesh24():
    return get_mesh(24)


@pytest.fixture(scope="session")
def mesh48():
    return get_mesh(48)


@pytest.fixture(scope="session")
def mesh96():
    return get_mesh(96)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fuchsian():
    return mb.genus2_generators()


def _solved(mesh, case, **params):
    rep = mb.example_holonomy(case, **params)
    f = hm.solve(rep, mesh)
    return f, hm.derivatives(mesh, f)


@pytest.fixture(scope="session")
def case_I_24(mesh24):
    return _solved(mesh24, "I", twist=0.5)


@pytest.fixture(scope="session")
def pipeline_I_48():
    return run_pipeline(RunConfig(case="I", twist=0.5, resolution=48))


@pytest.fixture(scope="session")
def pipeline_II_48():
    return run_pipeline(RunConfig(case="II", resolution=48))


@pytest.fixture(scope="session")
def pipeline_V_48():
    return run_pipeline(RunConfig(case="V", resolution=48))
