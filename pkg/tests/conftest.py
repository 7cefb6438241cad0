import pytest

from dnw.harness.data import gen_spirals


@pytest.fixture(scope="session")
def spirals_small():
    return gen_spirals(60, 2, 0.1, seed=3)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
