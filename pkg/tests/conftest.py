import gc
import os

import pytest
from hypothesis import HealthCheck, settings

import _support

settings.register_profile(
    "default",
    deadline=None,
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", "60")),
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def no_gc():
    """Keep the cyclic collector out of tight timing loops."""
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()
        gc.collect()


def pytest_terminal_summary(terminalreporter):
    lines = _support.ACCEPTANCE_LINES
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(lines):
        terminalreporter.write_line(lines[criterion])
