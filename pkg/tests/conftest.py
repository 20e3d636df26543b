import pytest

from helpers import ACCEPTANCE, binary_network, continuous_network


@pytest.fixture(scope="session")
def bin_data():
    return binary_network()


@pytest.fixture(scope="session")
def cont_data():
    return continuous_network()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
