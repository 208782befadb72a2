import pytest

_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_KEY] = []
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


@pytest.fixture
def accept(request):
    """``accept(n, title, ok, detail)`` prints and records one PASS/FAIL line, then asserts ``ok``."""
    def record(n, title, ok, detail=""):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[_KEY].append((n, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
