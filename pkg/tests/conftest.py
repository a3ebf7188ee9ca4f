import pytest

_CRITERIA: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "PASS" if rep.passed else "FAIL"
        _CRITERIA.setdefault(n, []).append(f"{status} [{n:>2}] {title}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        lines = _CRITERIA[n]
        bad = [line for line in lines if line.startswith("FAIL")]
        terminalreporter.write_line(bad[0] if bad else lines[0])
