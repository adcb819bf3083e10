import pytest

from vmreserve.instances import intro_profile, worst_case_profile


@pytest.fixture(scope="session")
def worst():
    """Worst-case VM mix on the (80 vCPU, 640 GB) server."""
    return worst_case_profile()


@pytest.fixture(scope="session")
def worst_half():
    """Same mix on a (40, 320) server."""
    return worst_case_profile((40, 320))


@pytest.fixture(scope="session")
def intro():
    return intro_profile()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, ok: bool, detail: str) -> str:
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
