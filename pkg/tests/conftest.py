import pathlib

import numpy as np
import pytest

from sharpcert import kernels
from sharpcert.groups import GroupStructure, Problem
from sharpcert.problem_io import load_problem

FIXTURES = pathlib.Path(__file__).parent / "fixtures"
CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def strong_toy():
    return load_problem(FIXTURES / "strong_toy.json")


@pytest.fixture
def sharp_toy():
    return load_problem(FIXTURES / "sharp_toy.json")


@pytest.fixture
def not_optimal():
    """``x0 = e3`` for a single measurement of the coordinate sum: rho = sqrt(2)."""
    return Problem([[1.0, 1.0, 1.0]], GroupStructure(3, [[0, 1], [2]]), [0.0, 0.0, 1.0])


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return kernels.get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance reporting ------------------------------------------------------------


def _results(config):
    if CRITERIA not in config.stash:
        config.stash[CRITERIA] = {}
    return config.stash[CRITERIA]


@pytest.fixture
def criterion(request):
    """``check(ok, detail)`` records one part of the criterion named by the
    test's ``acceptance`` marker and returns ``ok``."""
    name = request.node.get_closest_marker("acceptance").args[0]

    def check(ok, detail):
        ok = bool(ok)
        _results(request.config).setdefault(name, []).append((request.node.nodeid, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
        return ok

    return check


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call" and report.failed:
        parts = _results(item.config).setdefault(marker.args[0], [])
        if not any(node == item.nodeid for node, _, _ in parts):
            parts.append((item.nodeid, False, f"{item.name} raised {call.excinfo.typename}"))
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = _results(config)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda n: int(n[2:])):
        parts = results[name]
        ok = all(p[1] for p in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: " + "; ".join(p[2] for p in parts))
