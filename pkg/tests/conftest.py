import pytest

CRITERIA = {
    1: "gradient correctness",
    2: "one-class SVM oracle equivalence",
    3: "alarm-scoring oracle equivalence",
    4: "statistics closed forms",
    5: "DCGAN mechanics",
    6: "end-to-end toy protocol",
    7: "preprocessing",
    8: "file formats",
    9: "aggregation fidelity",
}

_criterion_of: dict[str, int] = {}
_outcome: dict[int, bool] = {}
_notes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _criterion_of[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    n = _criterion_of.get(report.nodeid)
    if n is None or (report.when != "call" and report.passed):
        return
    _outcome[n] = _outcome.get(n, True) and report.passed and not report.skipped


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion's summary line."""
    n = _criterion_of.get(request.node.nodeid)

    def add(text: str) -> None:
        if n is not None:
            _notes.setdefault(n, []).append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcome:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcome):
        status = "PASS" if _outcome[n] else "FAIL"
        detail = "; ".join(_notes.get(n, []))
        terminalreporter.write_line(f"criterion {n}: {status}  {CRITERIA[n]}" + (f"  ({detail})" if detail else ""))
