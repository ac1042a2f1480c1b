import math

import numpy as np
import pytest

from phaseplug.helmholtz import HelmholtzAssembler, PhysicsParams
from phaseplug.levelset import classify_and_cut
from phaseplug.mesh import GeometryParams, build_benchmark_mesh, build_duct_mesh
from phaseplug.optimizer import PhasePlugProblem

H = 0.45e-3
SPACING = H / math.sqrt(2.0)


@pytest.fixture(scope="session")
def geom():
    return GeometryParams()


@pytest.fixture(scope="session")
def mesh(geom):
    return build_benchmark_mesh(geom, H)


@pytest.fixture(scope="session")
def problem():
    return PhasePlugProblem(solver="direct")


@pytest.fixture(scope="session")
def problem_lossless():
    return PhasePlugProblem(physics=PhysicsParams(losses=False), solver="direct")


@pytest.fixture(scope="session")
def baseline(problem):
    """Baseline cut geometry and assembled parts (losses on)."""
    phi, cut = problem.geometry_for(problem.design0)
    parts = problem.assembler.assemble(cut)
    return phi, cut, parts


@pytest.fixture(scope="session")
def small_duct():
    m = build_duct_mesh(0.01, 0.002, 0.5e-3)
    a = HelmholtzAssembler(m, PhysicsParams(losses=False))
    return m, a


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cut_of(mesh, phi):
    return classify_and_cut(mesh, phi)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
