import os
import re

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    database=None,
    derandomize=os.environ.get("REFLEXEC_RANDOM") is None,
)
settings.load_profile("default")

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_results: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    number = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        outcome = "PASS" if report.outcome == "passed" else "FAIL"
        prev = _results.get(number)
        if prev is None or prev[0] == "PASS":
            _results[number] = (outcome, m.group(2), report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        outcome, label, duration = _results[number]
        terminalreporter.write_line(
            f"criterion {number:2d} {outcome}  {label.replace('_', ' ')} ({duration:.2f} s)")
