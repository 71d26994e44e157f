import os
import warnings

import pytest
from hypothesis import HealthCheck, settings

from artifact.errors import NonConvergenceWarning

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# small but complete configuration for fast end-to-end runs
TINY = {
    "data.classes": 2, "data.per_class": 3, "data.test_per_class": 2, "data.frames": 6, "data.points": 24,
    "data.static_classes": 2, "data.static_per_class": 3, "data.static_points": 24,
    "embed.num_anchors": 4, "embed.neighbors_k": 4, "embed.dim": 16, "adapter.r": 4, "model.heads": 2,
    "schedule.stage1_epochs": 2, "schedule.stage2_epochs": 2, "schedule.warmup_epochs": 1,
    "schedule.decay_epochs": (1,), "schedule.batch_size": 4, "otdd.b": 4,
}

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = ""
        if report.failed:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed"
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
    passed = sum(1 for v in _CRITERIA.values() if v[1] == "PASS")
    terminalreporter.write_line(f"{passed}/{len(_CRITERIA)} acceptance criteria passed")


@pytest.fixture
def quiet_ot():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        yield
