import pytest

from fleetsim.graph import all_pairs_shortest, build_lattice

CRITERIA: dict[int, str] = {}


def record(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])


@pytest.fixture(scope="session")
def lattice():
    net = build_lattice(4, 4, seed=3)
    return net, all_pairs_shortest(net)
