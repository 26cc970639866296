"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""
import pytest

ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Call ``verdict(ok, detail)`` once per criterion; the line is printed even under output capture."""
    name = request.node.name

    def record(ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
