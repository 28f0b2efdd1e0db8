import numpy as np
import pytest

from doubleclip.synth import TabularEnvironment

ACCEPTANCE_LINES = []


@pytest.fixture
def worked_env():
    """One context, two actions: logging (0.9, 0.1), target (0.5, 0.5), rewards 1."""
    return TabularEnvironment(
        context_probs=[1.0],
        logging_table=[[0.9, 0.1]],
        expected_rewards=[[1.0, 1.0]],
        target_table=[[0.5, 0.5]],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log():
    def log(criterion, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {criterion}: {status}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
