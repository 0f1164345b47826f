import pytest

_details: dict[str, str] = {}
_verdicts: list[str] = []


@pytest.fixture()
def acceptance_detail(request):
    """Let an acceptance test attach a one-line summary to its verdict."""

    def record(text: str):
        _details[request.node.name] = text

    return record


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    verdict = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
    extra = _details.get(name)
    _verdicts.append(f"{name}: {verdict}" + (f" ({extra})" if extra else ""))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
