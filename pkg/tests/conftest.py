import pytest

_VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for an acceptance criterion."""
    number, title = request.node.get_closest_marker("criterion").args

    def record(ok: bool, detail: str = ""):
        _VERDICTS[number] = ("PASS" if ok else "FAIL", f"{title} {detail}".strip())
        assert ok, detail

    _VERDICTS[number] = ("FAIL", f"{title} (did not finish)")
    yield record


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        status, text = _VERDICTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")
