from collections import defaultdict

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmrselect.mvn import build_model
from mmrselect.solver import SolveConfig, solve_lfp
from oracles import CASES

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


class _SolveCache:
    def __init__(self):
        self._reports = {}

    def get(self, case: int, **overrides):
        key = (case, tuple(sorted(overrides.items())))
        if key not in self._reports:
            sigma = CASES[case] if isinstance(case, int) else case
            self._reports[key] = solve_lfp(build_model(sigma), SolveConfig(**overrides))
        return self._reports[key]

    def solve(self, sigma, **overrides):
        key = (tuple(map(tuple, np.asarray(sigma, dtype=float))), tuple(sorted(overrides.items())))
        if key not in self._reports:
            self._reports[key] = solve_lfp(build_model(sigma), SolveConfig(**overrides))
        return self._reports[key]


@pytest.fixture(scope="session")
def solved():
    """Lazily solved reports shared by every test in the session."""
    return _SolveCache()


# --- acceptance summary ------------------------------------------------------

_CRITERIA = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = [v for k, v in report.user_properties if k == "detail"]
        _CRITERIA[crit].append((report.nodeid.split("::")[-1], report.outcome, details))


@pytest.fixture(autouse=True)
def _criterion_tag(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_CRITERIA):
        results = _CRITERIA[crit]
        ok = all(outcome == "passed" for _, outcome, _ in results)
        details = "; ".join(d for _, _, ds in results for d in ds)
        failed = [name for name, outcome, _ in results if outcome != "passed"]
        line = f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}"
        if details:
            line += f"  [{details}]"
        if failed:
            line += f"  failing: {', '.join(failed)}"
        tr.write_line(line)
