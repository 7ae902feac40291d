import pytest

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    cid, title = mark.args
    entry = _ACCEPTANCE.setdefault(item.nodeid, {"label": f"{cid:>4}  {title}", "verdict": "PASS", "seconds": 0.0})
    entry["seconds"] += report.duration
    if report.skipped and report.when in ("setup", "call"):
        entry["verdict"] = "SKIP"
    elif report.failed:
        entry["verdict"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in _ACCEPTANCE.values():
        terminalreporter.write_line(f"[{entry['verdict']}] {entry['label']}  ({entry['seconds']:.1f}s)")
