import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")

# criterion number -> (name, passed, detail); filled by the acceptance tests
_criteria: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Record an acceptance-criterion verdict for the end-of-run summary.

    Tests call the recorder before asserting so a failing criterion still
    shows up as FAIL in the summary instead of vanishing.
    """

    def _record(number: int, name: str, passed: bool, detail: str = "") -> None:
        _criteria[number] = (name, bool(passed), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        name, passed, detail = _criteria[number]
        verdict = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d} {name}: {verdict}{suffix}")
