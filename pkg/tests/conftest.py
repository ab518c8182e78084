import pytest

from intimacy.cli import fixture_path
from intimacy.registry import default_registry
from intimacy.training import StubBackend

_acceptance = []


@pytest.fixture
def registry():
    return default_registry()


@pytest.fixture
def stub():
    return StubBackend()


@pytest.fixture
def stub_handles(registry, stub):
    return {m.id: stub.handle_for(m) for m in registry.members}


@pytest.fixture
def fixture_files():
    return {
        "primary": fixture_path("train.csv"),
        "auxiliary": fixture_path("questions.csv"),
        "test": fixture_path("test.csv"),
    }


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        if report.when == "setup" and report.outcome == "passed":
            return
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{label}  {name}")
