import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gpcal.harness.config import resolve  # noqa: E402


@pytest.fixture(scope="session")
def default_cfg():
    return resolve()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
