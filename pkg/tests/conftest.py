import pytest

from probsec.case import builtin_case
from probsec.scenarios import behavior_set, build_contingencies


@pytest.fixture(scope="session")
def case3():
    return builtin_case("irep-3bus")


@pytest.fixture(scope="session")
def case6():
    return builtin_case("irep-6bus")


@pytest.fixture(scope="session")
def conts3(case3):
    return build_contingencies(case3)


@pytest.fixture(scope="session")
def beh():
    return behavior_set(0.2)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
