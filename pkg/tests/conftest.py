import sys

import pytest

from vaultquery import kernels


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run a test once per kernel backend, restoring the default afterwards."""
    previous = kernels.backend()
    kernels.use(request.param)
    yield request.param
    kernels.use(previous)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines after the test run."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
