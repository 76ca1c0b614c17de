import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (outcome, detail); filled by tests marked ``criterion``
_DETAILS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}

TITLES = {
    1: "gradient certification",
    2: "oracle equivalence",
    3: "adapter analytic cases",
    4: "distillation analytic cases",
    5: "gradient rebalancing",
    6: "spike stabilization",
    7: "ablation structure",
    8: "schema grammar",
    9: "manifest arithmetic",
}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.fixture
def detail(request):
    marker = request.node.get_closest_marker("criterion")
    n = marker.args[0]

    def note(text: str):
        _DETAILS[n] = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not rep.failed:
        return
    n = marker.args[0]
    if rep.failed:
        _OUTCOMES[n] = "FAIL"
    elif rep.when == "call":
        _OUTCOMES.setdefault(n, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in TITLES.items():
        status = _OUTCOMES.get(n, "NOT RUN")
        extra = f"  [{_DETAILS[n]}]" if n in _DETAILS else ""
        terminalreporter.write_line(f"criterion {n} {status:<7} {title}{extra}")
