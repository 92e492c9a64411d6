import numpy as np
import pytest

# One "ACn PASS/FAIL: ..." line per acceptance criterion, echoed in the summary.
ACCEPTANCE_LINES = []

from sface.simulation import STUDY_I, simulate_population


@pytest.fixture(scope="session")
def study_data():
    """A 4000-row Study I dataset shared by the estimator-level tests."""
    data, _ = simulate_population(STUDY_I, 4000, seed=7)
    return data


@pytest.fixture
def write_csv(tmp_path):
    """Write ``text`` to a temporary CSV and return its path."""
    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return _write


def random_design(rng, n, p):
    """Intercept plus ``p`` standard-normal columns."""
    return np.column_stack([np.ones(n), rng.standard_normal((n, p))])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
