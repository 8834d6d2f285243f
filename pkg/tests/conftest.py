import math

import numpy as np
import pytest
from hypothesis import settings

from optimembrane.geometry import DirichletSet, Domain, LoadSpec, build_grid, discretize_load
from optimembrane.membrane import solve_om

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="session")
def square():
    return Domain.square(1.0)


@pytest.fixture(scope="session")
def boundary(square):
    return DirichletSet.whole_boundary(square)


@pytest.fixture(scope="session")
def grid8(square, boundary):
    return build_grid(square, 1 / 8, boundary)


@pytest.fixture(scope="session")
def center_solution(grid8):
    """delta at the center of the unit square, h = 1/8, all pairs."""
    load = discretize_load(grid8, LoadSpec.point((0.0, 0.0)))
    return solve_om(grid8, load, pairs="full", column_generation=False)


@pytest.fixture(scope="session")
def center_solution_cg(grid8):
    load = discretize_load(grid8, LoadSpec.point((0.0, 0.0)))
    return solve_om(grid8, load, pairs="full", column_generation=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion; shown in the terminal summary."""
    def add(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag:<5} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
