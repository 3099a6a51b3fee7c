import json
from pathlib import Path

import numpy as np
import pytest

ORACLE_FILE = Path(__file__).with_name("oracle_values.json")

_CRITERIA: list[tuple[int, str, bool, str]] = []


@pytest.fixture(scope="session")
def oracles():
    return json.loads(ORACLE_FILE.read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    detail = "; ".join(str(v) for k, v in rep.user_properties if k == "detail")
    _CRITERIA.append((marker.args[0], marker.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
