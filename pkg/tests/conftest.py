import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.outcome != "passed"):
        return
    number, title = mark.args
    passed = rep.passed and not (hasattr(rep, "wasxfail") and rep.skipped)
    measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = ("PASS" if passed else "FAIL", title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, measured = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
