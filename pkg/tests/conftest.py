import numpy as np
import pytest

from rma.config import ExperimentConfig, build_problem
from rma.mesh import interval_mesh, unit_square_mesh
from rma.objective import InverseProblem, synthesize_data
from rma.pde import ForwardProblem
from rma.prior import Prior

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk2d() -> InverseProblem:
    return build_problem(ExperimentConfig.desk_2d())


@pytest.fixture
def small1d() -> InverseProblem:
    """40-element interval with a sinusoid truth and 1% noise."""
    mesh = interval_mesh(40)
    fp = ForwardProblem(mesh, bi=0.1)
    truth = np.sin(2 * np.pi * mesh.nodes[:, 0])
    data, sigma = synthesize_data(fp, truth, 0.01, seed=1)
    return InverseProblem(fp, Prior(mesh), data, sigma, truth)


@pytest.fixture
def small2d() -> InverseProblem:
    """8x8 square with a blob truth and 1% noise."""
    mesh = unit_square_mesh(8)
    fp = ForwardProblem(mesh, bi=0.1)
    x, y = mesh.nodes.T
    truth = np.exp(-((x - 0.5) ** 2 + (y - 0.6) ** 2) / 0.045)
    data, sigma = synthesize_data(fp, truth, 0.01, seed=2)
    return InverseProblem(fp, Prior(mesh), data, sigma, truth)
