import pytest

from rmxpipe import CaseDefinition, solve_case

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def seed9_case():
    case = CaseDefinition(3, 12, (-2.0, 8.0), boundary_seed=9, hamiltonian_seed=9)
    es, amps = solve_case(case)
    return case, es, amps


@pytest.fixture(scope="session")
def desk_case():
    case = CaseDefinition(20, 200, (-2.0, 8.0), boundary_seed=10, hamiltonian_seed=9)
    es, amps = solve_case(case)
    return case, es, amps


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
