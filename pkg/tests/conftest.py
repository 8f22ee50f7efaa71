import numpy as np
import pytest
import torch

from solarchip.data.synthetic import generate_archive

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_archive():
    """24 samples at side 32: enough for labels, splits and short training runs."""
    return generate_archive(seed=3, count=24, side=32)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
