import numpy as np
import pytest

from funcwomble.covmodel import CovarianceModel
from funcwomble.fdata import Grid, basis_matrix


def gaussian_field(rng, locations, model: CovarianceModel, p: int = 5, grid: Grid | None = None):
    """Functional field whose trace covariance is ``model``: ``p`` iid loadings on Legendre functions."""
    grid = grid or Grid.uniform(41)
    s = np.asarray(locations)
    d2 = np.sum((s[:, None] - s[None]) ** 2, axis=-1)
    cov = sum(c.sill * np.exp(-d2 / c.range**2) for c in model.components) + model.nugget_trace * np.eye(len(s))
    factor = np.linalg.cholesky(cov / p)
    loadings = factor @ rng.standard_normal((len(s), p))
    return loadings @ basis_matrix("legendre", p, grid), grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
