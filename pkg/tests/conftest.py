import sys
from pathlib import Path

import pytest

from imtest.mdpfile import load_mdp

HERE = Path(__file__).parent
DATA = HERE / "data"
HELPERS = HERE / "helpers"

sys.path.insert(0, str(HERE))

S0, S1, BAD_S, GOAL_S = 0, 1, 2, 3
A, B = 0, 1


def helper(name, *args):
    return [sys.executable, str(HELPERS / name), *map(str, args)]


@pytest.fixture
def t1():
    return load_mdp(DATA / "t1.mdp")


@pytest.fixture
def data_dir():
    return DATA


_ACCEPTANCE = "acceptance_results"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    setattr(config, _ACCEPTANCE, {})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    results = getattr(item.config, _ACCEPTANCE)
    number, title = mark.args
    ok = rep.passed and results.get(number, (title, True))[1]
    results[number] = (title, ok)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, _ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
