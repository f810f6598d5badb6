import time

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item.user_properties.append(("elapsed", time.perf_counter() - start))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n, title = mark.args
    entry = _RESULTS.setdefault(n, {"title": title, "ok": True, "elapsed": 0.0, "notes": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["elapsed"] += dict(item.user_properties).get("elapsed", 0.0)
    for key, value in item.user_properties:
        if key == "note":
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        status = "PASS" if e["ok"] else "FAIL"
        line = f"criterion {n:>2} {status}  {e['title']}  ({e['elapsed']:.1f} s)"
        terminalreporter.write_line(line)
        for note in e["notes"]:
            terminalreporter.write_line(f"              {note}")
