import pytest

from kacfront.acceptance import instanton


@pytest.fixture(scope="session")
def inst():
    """Default instanton: beta = 1.5, L = 20, 801 nodes, Neumann padding."""
    return instanton()


def pytest_terminal_summary(terminalreporter):
    from kacfront.acceptance import LAST_RUN
    if LAST_RUN:
        terminalreporter.section("acceptance criteria")
        for r in LAST_RUN:
            terminalreporter.write_line(r.line())
