import pytest

_verdicts = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported as PASS/FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_early = rep.when == "setup" and not rep.passed
    if rep.when == "call" or failed_early:
        detail = dict(item.user_properties).get("detail", "")
        _verdicts.append((marker.args[0], "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, verdict, detail in _verdicts:
        terminalreporter.write_line(f"{verdict}  {name}" + (f"  [{detail}]" if detail else ""))
