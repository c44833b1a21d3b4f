"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_results: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        measured = [v for k, v in item.user_properties if k == "measured"]
        _results.setdefault(str(marker.args[0]), []).append((item.name, rep.passed, measured))


def _key(k: str):
    return int(k) if k.isdigit() else 10**6


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_results, key=_key):
        checks = _results[key]
        passed = sum(ok for _, ok, _ in checks)
        status = "PASS" if passed == len(checks) else "FAIL"
        failed = [name for name, ok, _ in checks if not ok]
        measured = "; ".join(m for _, _, ms in checks for m in ms)
        line = f"criterion {key}: {status} ({passed}/{len(checks)} checks)"
        if failed:
            line += f" failing: {', '.join(failed)}"
        if measured:
            line += f" | {measured}"
        tr.write_line(line)
