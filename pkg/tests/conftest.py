import numpy as np
import pytest

from hlrelax.bench import ManufacturedCase
from hlrelax.grid import GridSpec, NodeField
from hlrelax.solver import Problem

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(
            f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_rho(spec, rng):
    """Mean-zero random charge density."""
    rho = rng.standard_normal(spec.cells)
    return rho - rho.mean()


def eq27_eps(spec):
    return ManufacturedCase.eq27(spec.cells[0], spec.dim).eps_nodes.values


def random_problem(n, seed, dim=2, method="single", tol=1e-12, **kw):
    spec = GridSpec.square(n, 4.0, dim)
    rng = np.random.default_rng(seed)
    return Problem(spec, NodeField(spec, random_rho(spec, rng)),
                   NodeField(spec, eq27_eps(spec)), method=method, tol=tol,
                   **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
